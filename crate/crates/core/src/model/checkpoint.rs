//! Checkpoint directories: a `manifest.txt` of `key = value` lines plus one
//! OMNT file per named parameter tensor.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::ndcore::omnt::OmntArray;
use crate::ndcore::Tensor;

use super::{DecoderMode, ModelParams, OmniMae, OmniMaeConfig, Preset, StackConfig};

pub const FORMAT: &str = "omnimae-checkpoint-v1";
pub const MANIFEST: &str = "manifest.txt";

/// Parameters plus the run metadata needed to resume or evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: OmniMaeConfig,
    pub params: ModelParams<f64>,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

fn file_name(param: &str) -> String {
    format!("{param}.omnt")
}

impl Checkpoint {
    pub fn manifest_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "format = {FORMAT}");
        let _ = writeln!(s, "preset = {}", c.preset);
        let _ = writeln!(s, "encoder_dim = {}", c.encoder.dim);
        let _ = writeln!(s, "encoder_depth = {}", c.encoder.depth);
        let _ = writeln!(s, "encoder_heads = {}", c.encoder.heads);
        let _ = writeln!(s, "decoder_dim = {}", c.decoder.dim);
        let _ = writeln!(s, "decoder_depth = {}", c.decoder.depth);
        let _ = writeln!(s, "decoder_heads = {}", c.decoder.heads);
        let _ = writeln!(s, "patch = {}", c.patch);
        let _ = writeln!(s, "decoder_mode = {}", c.decoder_mode.as_str());
        let _ = writeln!(s, "ln_eps = {:e}", c.ln_eps);
        let _ = writeln!(s, "step = {}", self.step);
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tensors = {}", self.params.len());
        s
    }

    /// Writes into `dir`, creating it if needed. Existing files are overwritten.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let model = OmniMae::new(self.config)?;
        for (spec, t) in model.layout().specs.iter().zip(self.params.tensors()) {
            OmntArray::F64(t.clone()).write(dir.join(file_name(&spec.name)))?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, self.manifest_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kv = KvFile::read(dir.join(MANIFEST))?;
        let format: String = kv.require("format")?;
        if format != FORMAT {
            let e = kv.get("format").expect("required above");
            return Err(kv.error(e, format!("unsupported checkpoint format {format:?}")));
        }
        let preset: Preset = kv.require("preset")?;
        let config = OmniMaeConfig {
            preset,
            encoder: StackConfig::new(
                kv.require("encoder_dim")?,
                kv.require("encoder_depth")?,
                kv.require("encoder_heads")?,
            ),
            decoder: StackConfig::new(
                kv.require("decoder_dim")?,
                kv.require("decoder_depth")?,
                kv.require("decoder_heads")?,
            ),
            patch: kv.require("patch")?,
            decoder_mode: kv.require::<DecoderMode>("decoder_mode")?,
            ln_eps: kv.require("ln_eps")?,
        };
        let model = OmniMae::new(config)?;
        let count: usize = kv.require("tensors")?;
        if count != model.layout().specs.len() {
            return Err(Error::Format(format!(
                "manifest lists {count} tensors, configuration needs {}",
                model.layout().specs.len()
            )));
        }
        let tensors = model
            .layout()
            .specs
            .iter()
            .map(|s| -> Result<Tensor<f64>> {
                match OmntArray::read(dir.join(file_name(&s.name)))? {
                    OmntArray::F64(t) => Ok(t),
                    other => Ok(other.to_real()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            config,
            params: ModelParams::from_tensors(model.layout(), tensors)?,
            step: kv.require("step")?,
            epoch: kv.require("epoch")?,
            seed: kv.require("seed")?,
        })
    }

    /// Path of the tensor file for `param` inside `dir`.
    pub fn tensor_path(dir: impl AsRef<Path>, param: &str) -> PathBuf {
        dir.as_ref().join(file_name(param))
    }
}
