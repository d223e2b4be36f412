use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::patchify::{Modality, PatchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    VitB,
    VitL,
    VitH,
    Toy,
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::VitB => "vit-b",
            Preset::VitL => "vit-l",
            Preset::VitH => "vit-h",
            Preset::Toy => "toy",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "vit-b" | "vitb" | "b" => Ok(Preset::VitB),
            "vit-l" | "vitl" | "l" => Ok(Preset::VitL),
            "vit-h" | "vith" | "h" => Ok(Preset::VitH),
            "toy" => Ok(Preset::Toy),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::param(format!("unknown preset {other:?}"))),
        }
    }
}

/// Whether images and videos share one decoder or get one each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderMode {
    Common,
    Separate,
}

impl DecoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderMode::Common => "common",
            DecoderMode::Separate => "separate",
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "common" | "shared" => Ok(DecoderMode::Common),
            "separate" => Ok(DecoderMode::Separate),
            other => Err(Error::param(format!("unknown decoder mode {other:?}"))),
        }
    }
}

/// Width, depth and head count of one transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StackConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl StackConfig {
    pub const fn new(dim: usize, depth: usize, heads: usize) -> Self {
        StackConfig { dim, depth, heads }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn validate(&self, which: &str) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::param(format!(
                "{which} width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.dim < 6 || !self.dim.is_multiple_of(2) {
            return Err(Error::param(format!(
                "{which} width {} must be even and ≥ 6 for positional encoding",
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmniMaeConfig {
    pub preset: Preset,
    pub encoder: StackConfig,
    pub decoder: StackConfig,
    pub patch: PatchConfig,
    pub decoder_mode: DecoderMode,
    /// LayerNorm epsilon inside the transformer stacks.
    pub ln_eps: f64,
}

impl OmniMaeConfig {
    pub const fn vit_b() -> Self {
        Self::preset_with(
            Preset::VitB,
            StackConfig::new(768, 12, 12),
            StackConfig::new(384, 4, 6),
            PatchConfig { t: 2, h: 16, w: 16 },
        )
    }

    pub const fn vit_l() -> Self {
        Self::preset_with(
            Preset::VitL,
            StackConfig::new(1024, 24, 16),
            StackConfig::new(512, 4, 16),
            PatchConfig { t: 2, h: 16, w: 16 },
        )
    }

    pub const fn vit_h() -> Self {
        Self::preset_with(
            Preset::VitH,
            StackConfig::new(1280, 32, 16),
            StackConfig::new(512, 8, 16),
            PatchConfig { t: 2, h: 14, w: 14 },
        )
    }

    /// Small enough to train and gradient-check on a laptop in double precision.
    pub const fn toy() -> Self {
        Self::preset_with(
            Preset::Toy,
            StackConfig::new(16, 2, 2),
            StackConfig::new(32, 1, 2),
            PatchConfig { t: 2, h: 16, w: 16 },
        )
    }

    const fn preset_with(
        preset: Preset,
        encoder: StackConfig,
        decoder: StackConfig,
        patch: PatchConfig,
    ) -> Self {
        OmniMaeConfig {
            preset,
            encoder,
            decoder,
            patch,
            decoder_mode: DecoderMode::Common,
            ln_eps: 1e-6,
        }
    }

    pub fn from_preset(p: Preset) -> Result<Self> {
        match p {
            Preset::VitB => Ok(Self::vit_b()),
            Preset::VitL => Ok(Self::vit_l()),
            Preset::VitH => Ok(Self::vit_h()),
            Preset::Toy => Ok(Self::toy()),
            Preset::Custom => Err(Error::param("the custom preset has no default dimensions")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("encoder")?;
        self.decoder.validate("decoder")?;
        if self.encoder.depth == 0 {
            return Err(Error::param("encoder depth must be ≥ 1"));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::param("layernorm eps must be positive"));
        }
        Ok(())
    }

    /// Scalars per patch.
    pub fn patch_len(&self) -> usize {
        self.patch.patch_len()
    }

    /// Which decoder parameter set serves `modality`.
    pub fn decoder_slot(&self, modality: Modality) -> usize {
        match (self.decoder_mode, modality) {
            (DecoderMode::Common, _) | (DecoderMode::Separate, Modality::Image) => 0,
            (DecoderMode::Separate, Modality::Video) => 1,
        }
    }

    pub fn decoder_count(&self) -> usize {
        match self.decoder_mode {
            DecoderMode::Common => 1,
            DecoderMode::Separate => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_dimensions() {
        let b = OmniMaeConfig::vit_b();
        assert_eq!(
            (b.encoder.dim, b.encoder.depth, b.encoder.heads),
            (768, 12, 12)
        );
        assert_eq!((b.decoder.dim, b.decoder.depth), (384, 4));
        let l = OmniMaeConfig::vit_l();
        assert_eq!(
            (l.encoder.dim, l.encoder.depth, l.encoder.heads),
            (1024, 24, 16)
        );
        assert_eq!((l.decoder.dim, l.decoder.depth), (512, 4));
        let h = OmniMaeConfig::vit_h();
        assert_eq!(
            (h.encoder.dim, h.encoder.depth, h.encoder.heads),
            (1280, 32, 16)
        );
        assert_eq!((h.decoder.dim, h.decoder.depth), (512, 8));
        assert_eq!(h.patch, PatchConfig::new(2, 14, 14).unwrap());
        for c in [b, l, h, OmniMaeConfig::toy()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_heads() {
        let mut c = OmniMaeConfig::toy();
        c.encoder.heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn preset_names_parse() {
        for p in [Preset::VitB, Preset::VitL, Preset::VitH, Preset::Toy] {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("vit-z".parse::<Preset>().is_err());
    }
}
