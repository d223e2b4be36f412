//! Run configuration files and the pretraining driver.
//!
//! A run file is plain `key = value` text with `#` comments. Every key is
//! optional; see [`RunConfig::default`] for the defaults.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::datapipe::{
    build_epoch_plan, datasets_from_manifest, read_manifest, DatasetHandle, Loader, Replication,
};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::masking::{MaskKind, MaskSpec};
use crate::model::checkpoint::Checkpoint;
use crate::model::{DecoderMode, OmniMae, OmniMaeConfig, Preset};
use crate::ndcore::mix64;
use crate::patchify::{Modality, PatchConfig};
use crate::trainer::{lr_at, train_step, OptimSpec, TrainState};

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        image_count: usize,
        video_count: usize,
        image_size: usize,
        video_frames: usize,
        video_size: usize,
        seed: u64,
    },
    /// A manifest written by `gen-data`.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: OmniMaeConfig,
    pub image_mask: MaskSpec,
    pub video_mask: MaskSpec,
    pub optim: OptimSpec,
    pub data: DataSource,
    pub replication: Replication,
    pub image_ratio: usize,
    pub video_ratio: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Write `checkpoints/epoch-NNNN` every this many epochs (0 disables).
    pub checkpoint_every: u64,
    pub loader_workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: OmniMaeConfig::toy(),
            image_mask: MaskSpec {
                kind: MaskKind::Random,
                ratio: 0.90,
                seed: 0,
            },
            video_mask: MaskSpec {
                kind: MaskKind::Random,
                ratio: 0.95,
                seed: 0,
            },
            optim: OptimSpec::default(),
            data: DataSource::Synthetic {
                image_count: 8,
                video_count: 8,
                image_size: 64,
                video_frames: 8,
                video_size: 64,
                seed: 0,
            },
            replication: Replication::default(),
            image_ratio: 1,
            video_ratio: 1,
            out_dir: PathBuf::from("run"),
            seed: 0,
            checkpoint_every: 0,
            loader_workers: 2,
        }
    }
}

/// Parses `kind:ratio`, e.g. `random:0.9`; a bare number means random.
pub fn parse_mask(s: &str) -> Result<MaskSpec> {
    let (kind, ratio) = match s.split_once(':') {
        Some((k, r)) => (k.parse::<MaskKind>()?, r),
        None => (MaskKind::Random, s),
    };
    let ratio: f64 = ratio
        .trim()
        .parse()
        .map_err(|_| Error::param(format!("bad masking ratio {ratio:?}")))?;
    MaskSpec::new(kind, ratio, 0)
}

/// Wraps a `Result`-returning `FromStr` so [`KvFile::parse_value`] can use it.
struct Wrapped<T>(T);

impl std::str::FromStr for Wrapped<MaskSpec> {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_mask(s).map(Wrapped)
    }
}

const KEYS: &[&str] = &[
    "preset",
    "encoder_dim",
    "encoder_depth",
    "encoder_heads",
    "decoder_dim",
    "decoder_depth",
    "decoder_heads",
    "patch",
    "decoder_mode",
    "image_mask",
    "video_mask",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "warmup_epochs",
    "epochs",
    "batch_size",
    "data",
    "image_count",
    "video_count",
    "image_size",
    "video_frames",
    "video_size",
    "data_seed",
    "image_replication",
    "video_replication",
    "image_ratio",
    "video_ratio",
    "out_dir",
    "seed",
    "checkpoint_every",
    "loader_workers",
];

impl RunConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        if let Some(e) = kv.entries.iter().find(|e| !KEYS.contains(&e.key.as_str())) {
            return Err(kv.error(e, "unknown key"));
        }
        let mut c = RunConfig::default();
        if let Some(p) = kv.parse_value::<Preset>("preset")? {
            c.model = match p {
                Preset::Custom => c.model,
                p => OmniMaeConfig::from_preset(p)?,
            };
            c.model.preset = p;
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = kv.parse_value($key)? {
                    $field = v;
                }
            };
        }
        set!(c.model.encoder.dim, "encoder_dim");
        set!(c.model.encoder.depth, "encoder_depth");
        set!(c.model.encoder.heads, "encoder_heads");
        set!(c.model.decoder.dim, "decoder_dim");
        set!(c.model.decoder.depth, "decoder_depth");
        set!(c.model.decoder.heads, "decoder_heads");
        if let Some(p) = kv.parse_value::<PatchConfig>("patch")? {
            c.model.patch = p;
        }
        if let Some(m) = kv.parse_value::<DecoderMode>("decoder_mode")? {
            c.model.decoder_mode = m;
        }
        if let Some(Wrapped(m)) = kv.parse_value::<Wrapped<MaskSpec>>("image_mask")? {
            c.image_mask = m;
        }
        if let Some(Wrapped(m)) = kv.parse_value::<Wrapped<MaskSpec>>("video_mask")? {
            c.video_mask = m;
        }
        set!(c.optim.lr, "lr");
        set!(c.optim.weight_decay, "weight_decay");
        set!(c.optim.beta1, "beta1");
        set!(c.optim.beta2, "beta2");
        set!(c.optim.eps, "adam_eps");
        set!(c.optim.warmup_epochs, "warmup_epochs");
        set!(c.optim.total_epochs, "epochs");
        set!(c.optim.batch_size, "batch_size");
        if let Some(e) = kv.get("data") {
            if e.value != "synthetic" {
                let p = PathBuf::from(&e.value);
                let base = kv.path.parent().unwrap_or(Path::new("."));
                c.data = DataSource::Manifest(if p.is_absolute() { p } else { base.join(p) });
            }
        }
        if let DataSource::Synthetic {
            image_count,
            video_count,
            image_size,
            video_frames,
            video_size,
            seed,
        } = &mut c.data
        {
            set!(*image_count, "image_count");
            set!(*video_count, "video_count");
            set!(*image_size, "image_size");
            set!(*video_frames, "video_frames");
            set!(*video_size, "video_size");
            set!(*seed, "data_seed");
        }
        set!(c.replication.image, "image_replication");
        set!(c.replication.video, "video_replication");
        set!(c.image_ratio, "image_ratio");
        set!(c.video_ratio, "video_ratio");
        if let Some(e) = kv.get("out_dir") {
            let p = PathBuf::from(&e.value);
            let base = kv.path.parent().unwrap_or(Path::new("."));
            c.out_dir = if p.is_absolute() { p } else { base.join(p) };
        }
        set!(c.seed, "seed");
        set!(c.checkpoint_every, "checkpoint_every");
        set!(c.loader_workers, "loader_workers");

        let first_line = kv.entries.first().map_or(0, |e| e.line);
        let invalid = |err: Error| Error::Parse {
            path: kv.path.clone(),
            line: first_line,
            msg: format!("invalid configuration: {err}"),
        };
        c.model.validate().map_err(invalid)?;
        c.optim.validate().map_err(invalid)?;
        Ok(c)
    }

    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        Self::from_kv(&KvFile::parse(text, path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn mask_for(&self, m: Modality) -> MaskSpec {
        match m {
            Modality::Image => self.image_mask,
            Modality::Video => self.video_mask,
        }
    }

    pub fn datasets(&self) -> Result<Vec<DatasetHandle>> {
        match &self.data {
            DataSource::Synthetic {
                image_count,
                video_count,
                image_size,
                video_frames,
                video_size,
                seed,
            } => {
                let mut out = Vec::new();
                if *image_count > 0 {
                    out.push(DatasetHandle::synthetic(
                        "image",
                        Modality::Image,
                        *image_count,
                        *seed,
                        1,
                        *image_size,
                        *image_size,
                    )?);
                }
                if *video_count > 0 {
                    out.push(DatasetHandle::synthetic(
                        "video",
                        Modality::Video,
                        *video_count,
                        *seed,
                        *video_frames,
                        *video_size,
                        *video_size,
                    )?);
                }
                Ok(out)
            }
            DataSource::Manifest(path) => datasets_from_manifest(&read_manifest(path)?),
        }
    }

    pub fn ratios_for(&self, datasets: &[DatasetHandle]) -> Vec<usize> {
        datasets
            .iter()
            .map(|d| match d.modality {
                Modality::Image => self.image_ratio,
                Modality::Video => self.video_ratio,
            })
            .collect()
    }
}

/// Header of the training log.
pub const LOG_HEADER: &str = "step,epoch,modality,loss,lr,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub steps: u64,
    pub epochs: u64,
    /// `(modality, loss)` of the last step.
    pub last: Option<(Modality, f64)>,
    pub log: PathBuf,
    pub checkpoint: PathBuf,
}

/// Trains per `cfg`, writing `train_log.csv`, one plan file per epoch under
/// `plans/`, periodic checkpoints under `checkpoints/`, and the final state
/// under `checkpoint/`.
pub fn pretrain(cfg: &RunConfig) -> Result<PretrainReport> {
    let model = OmniMae::new(cfg.model)?;
    let datasets = cfg.datasets()?;
    if datasets.is_empty() {
        return Err(Error::param("no training data configured"));
    }
    let ratios = cfg.ratios_for(&datasets);
    let out = &cfg.out_dir;
    for sub in ["plans", "checkpoints"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let log_path = out.join("train_log.csv");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let write_err = |e| Error::io(&log_path, e);
    writeln!(log, "{LOG_HEADER}").map_err(write_err)?;

    let mut state = TrainState::<f64>::init(&model, cfg.seed);
    let started = Instant::now();
    let mut last = None;
    for epoch in 0..cfg.optim.total_epochs {
        let plan = build_epoch_plan(
            &datasets,
            cfg.optim.batch_size,
            cfg.replication,
            &ratios,
            mix64(cfg.seed, epoch),
        )?;
        let plan_path = out.join("plans").join(format!("epoch-{epoch:04}.txt"));
        fs::write(&plan_path, plan.to_text()).map_err(|e| Error::io(&plan_path, e))?;
        let steps_per_epoch = plan.steps() as u64;
        state.epoch = epoch;
        for batch in Loader::new(plan, datasets.clone(), cfg.loader_workers, 2) {
            let batch = batch?;
            let lr = lr_at(state.step, &cfg.optim, steps_per_epoch);
            let slots = batch.slots(cfg.mask_for(batch.modality));
            let step = state.step;
            let loss = train_step(&model, &mut state, &slots, &cfg.optim, lr)?;
            let mut row = String::new();
            let _ = write!(
                row,
                "{step},{epoch},{},{loss:.17e},{lr:.17e},{}",
                batch.modality,
                started.elapsed().as_millis()
            );
            writeln!(log, "{row}").map_err(write_err)?;
            last = Some((batch.modality, loss));
        }
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            checkpoint_of(&model, &state, cfg.seed, done)
                .save(out.join("checkpoints").join(format!("epoch-{done:04}")))?;
        }
    }
    log.flush().map_err(write_err)?;
    let final_dir = out.join("checkpoint");
    checkpoint_of(&model, &state, cfg.seed, cfg.optim.total_epochs).save(&final_dir)?;
    Ok(PretrainReport {
        steps: state.step,
        epochs: cfg.optim.total_epochs,
        last,
        log: log_path,
        checkpoint: final_dir,
    })
}

fn checkpoint_of(model: &OmniMae, state: &TrainState<f64>, seed: u64, epoch: u64) -> Checkpoint {
    Checkpoint {
        config: *model.config(),
        params: state.params.clone(),
        step: state.step,
        epoch,
        seed,
    }
}

/// Reads a training log, dropping the wall-clock column, so two runs can be
/// compared for determinism.
pub fn log_without_wall_clock(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect())
}
