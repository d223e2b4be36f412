//! Datasets, omnivorous batch planning with sample replication, an I/O
//! simulator, and the loader that feeds the trainer.

mod loader;
mod plan;
mod sim;
mod synth;

pub use loader::{load_sample, Batch, Loader};
pub use plan::{build_epoch_plan, BatchPlan, PlanDataset, PlannedBatch, Replication};
pub use sim::{simulate_epoch, BatchTiming, IoModel, SimReport};
pub use synth::{generate_synthetic, video_motion, Motion, Rect};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::patchify::{Modality, VisualTensor};

/// Where a dataset's samples come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// Generated on demand from `(seed, id)`.
    Synthetic {
        seed: u64,
        frames: usize,
        height: usize,
        width: usize,
    },
    /// One OMNT file per sample, indexed by id.
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHandle {
    pub name: String,
    pub modality: Modality,
    pub count: usize,
    pub source: Source,
}

impl DatasetHandle {
    pub fn synthetic(
        name: &str,
        modality: Modality,
        count: usize,
        seed: u64,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::param(format!(
                "dataset {name} needs at least one sample"
            )));
        }
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::param(format!(
                "dataset {name}: extents must be ≥ 1, got {frames}×{height}×{width}"
            )));
        }
        if modality == Modality::Image && frames != 1 {
            return Err(Error::param(format!(
                "dataset {name}: images are single-frame, got {frames} frames"
            )));
        }
        Ok(DatasetHandle {
            name: name.to_string(),
            modality,
            count,
            source: Source::Synthetic {
                seed,
                frames,
                height,
                width,
            },
        })
    }

    pub fn files(name: &str, modality: Modality, paths: Vec<PathBuf>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::param(format!(
                "dataset {name} needs at least one sample"
            )));
        }
        Ok(DatasetHandle {
            name: name.to_string(),
            modality,
            count: paths.len(),
            source: Source::Files(paths),
        })
    }

    /// Sample `id`, generated or read from disk.
    pub fn get(&self, id: usize) -> Result<VisualTensor<f64>> {
        match &self.source {
            Source::Synthetic { .. } => generate_synthetic(self, id),
            Source::Files(paths) => {
                let path = paths.get(id).ok_or_else(|| {
                    Error::Index(format!(
                        "sample {id} out of range for {} with {} samples",
                        self.name, self.count
                    ))
                })?;
                let x = VisualTensor::read_omnt(path)?;
                if x.modality() != self.modality {
                    return Err(Error::Format(format!(
                        "{}: expected a {}, file holds a {}",
                        path.display(),
                        self.modality,
                        x.modality()
                    )));
                }
                Ok(x)
            }
        }
    }
}

/// One manifest line: `id path modality TxHxWxC`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub path: PathBuf,
    pub modality: Modality,
    pub dims: [usize; 4],
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# id path modality dims\n");
    for e in entries {
        let [t, h, w, c] = e.dims;
        let _ = writeln!(
            s,
            "{} {} {} {t}x{h}x{w}x{c}",
            e.id,
            e.path.display(),
            e.modality
        );
    }
    s
}

/// Parses a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        let [id, file, modality, dims] = fields[..] else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        let id = id.parse().map_err(|_| err(format!("bad id {id:?}")))?;
        let modality = modality.parse().map_err(|e| err(format!("{e}")))?;
        let d: Vec<usize> = dims
            .split('x')
            .map(|v| v.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(format!("bad dims {dims:?}")))?;
        let [t, h, w, c] = d[..] else {
            return Err(err(format!("dims must have 4 extents, got {dims:?}")));
        };
        let file = PathBuf::from(file);
        out.push(ManifestEntry {
            id,
            path: if file.is_absolute() {
                file
            } else {
                base.join(file)
            },
            modality,
            dims: [t, h, w, c],
        });
    }
    Ok(out)
}

/// Splits manifest entries into one file-backed dataset per modality, in
/// [`Modality::ALL`] order; sample ids inside each dataset follow the
/// manifest order.
pub fn datasets_from_manifest(entries: &[ManifestEntry]) -> Result<Vec<DatasetHandle>> {
    Modality::ALL
        .into_iter()
        .filter_map(|m| {
            let paths: Vec<PathBuf> = entries
                .iter()
                .filter(|e| e.modality == m)
                .map(|e| e.path.clone())
                .collect();
            (!paths.is_empty()).then(|| DatasetHandle::files(m.as_str(), m, paths))
        })
        .collect()
}

/// Writes `count` synthetic samples per modality under `dir` plus
/// `manifest.txt`. Ids run `0..n` over images first, then videos.
pub fn write_synthetic(
    dir: impl AsRef<Path>,
    datasets: &[DatasetHandle],
) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for d in datasets {
        for id in 0..d.count {
            let x = d.get(id)?;
            let rel = PathBuf::from(format!("{}_{id:05}.omnt", d.modality));
            x.write_omnt(dir.join(&rel))?;
            entries.push(ManifestEntry {
                id: entries.len(),
                path: rel,
                modality: d.modality,
                dims: [x.frames(), x.height(), x.width(), 3],
            });
        }
    }
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, manifest_text(&entries)).map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}
