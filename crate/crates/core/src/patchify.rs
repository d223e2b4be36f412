//! Images and videos as `T×H×W×3` blocks, and their spatio-temporal patches.
//!
//! Patch `i` of a grid `(nt, nh, nw)` covers time slab `i / (nh·nw)`, row
//! `(i / nw) % nh` and column `i % nw`. Inside a patch, pixels are flattened in
//! (time, row, col, channel) order. Masks and positional encodings index into
//! this ordering, so it must not change.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::omnt::OmntArray;
use crate::ndcore::{Real, Tensor};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Image, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Video => "video",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "img" => Ok(Modality::Image),
            "video" | "vid" => Ok(Modality::Video),
            other => Err(Error::param(format!("unknown modality {other:?}"))),
        }
    }
}

/// A `T×H×W×3` pixel block with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTensor<T = f64> {
    pixels: Tensor<T>,
    modality: Modality,
}

impl<T: Real> VisualTensor<T> {
    /// Images must arrive as a single frame; replication to the patch depth
    /// happens in [`temporal_replicate`].
    pub fn new(pixels: Tensor<T>, modality: Modality) -> Result<Self> {
        let [_, _, _, c] = pixels.dims()[..] else {
            return Err(Error::shape(format!(
                "visual tensor must be T×H×W×3, got {:?}",
                pixels.dims()
            )));
        };
        if c != CHANNELS {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        Ok(VisualTensor { pixels, modality })
    }

    pub fn image(pixels: Tensor<T>) -> Result<Self> {
        if pixels.dims().first() != Some(&1) {
            return Err(Error::shape(format!(
                "images are single-frame, got dims {:?}",
                pixels.dims()
            )));
        }
        Self::new(pixels, Modality::Image)
    }

    pub fn video(pixels: Tensor<T>) -> Result<Self> {
        Self::new(pixels, Modality::Video)
    }

    pub fn frames(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[2]
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn pixels(&self) -> &Tensor<T> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<T> {
        self.pixels
    }

    /// Flat `H·W·3` slice of frame `k`.
    pub fn frame(&self, k: usize) -> &[T] {
        let n = self.height() * self.width() * CHANNELS;
        &self.pixels.data()[k * n..(k + 1) * n]
    }

    /// Pixels rounded and clamped to bytes.
    pub fn to_bytes(&self) -> Tensor<u8> {
        self.pixels
            .map(|v| v.to_f64_lossy().round().clamp(0.0, 255.0) as u8)
    }

    /// Writes as an `OMNT` u8 file. Values must already be whole numbers in
    /// `[0, 255]`; anything else is rejected rather than silently rounded.
    pub fn write_omnt(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        let exact = self
            .pixels
            .data()
            .iter()
            .zip(bytes.data())
            .all(|(&v, &b)| v.to_f64_lossy() == b as f64);
        if !exact {
            return Err(Error::param("pixels are not whole numbers in [0, 255]"));
        }
        OmntArray::U8(bytes).write(path)
    }

    /// Reads an `OMNT` file of any dtype; a single frame is taken to be an image.
    pub fn read_omnt(path: impl AsRef<Path>) -> Result<Self> {
        let arr = OmntArray::read(path)?;
        let t = arr.to_real::<T>();
        if t.dims().first() == Some(&1) {
            Self::image(t)
        } else {
            Self::video(t)
        }
    }
}

/// Patch extents `t×h×w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchConfig {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl PatchConfig {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::param(format!(
                "patch extents must be ≥ 1, got {t}×{h}×{w}"
            )));
        }
        Ok(PatchConfig { t, h, w })
    }

    /// Scalars per patch, `t·h·w·3`.
    pub fn patch_len(&self) -> usize {
        self.t * self.h * self.w * CHANNELS
    }

    /// Grid for an input of `frames×height×width` (after temporal replication).
    pub fn grid_for(&self, frames: usize, height: usize, width: usize) -> Result<GridShape> {
        for (axis, extent, patch) in [
            ("time", frames, self.t),
            ("height", height, self.h),
            ("width", width, self.w),
        ] {
            if extent == 0 || extent % patch != 0 {
                return Err(Error::shape(format!(
                    "{axis} extent {extent} is not divisible by patch extent {patch}"
                )));
            }
        }
        Ok(GridShape::new(
            frames / self.t,
            height / self.h,
            width / self.w,
        ))
    }
}

impl fmt::Display for PatchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

impl std::str::FromStr for PatchConfig {
    type Err = Error;

    /// Parses `TxHxW`, e.g. `2x16x16`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X', '×']).collect();
        let bad = || Error::param(format!("patch extents must look like 2x16x16, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        PatchConfig::new(n[0], n[1], n[2])
    }
}

/// Patch counts along time, height and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub nt: usize,
    pub nh: usize,
    pub nw: usize,
}

impl GridShape {
    pub const fn new(nt: usize, nh: usize, nw: usize) -> Self {
        GridShape { nt, nh, nw }
    }

    /// Total patch count `N`.
    pub fn len(&self) -> usize {
        self.nt * self.nh * self.nw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.nh * self.nw
    }

    /// `(τ, ρ, κ)` coordinates of patch `i`.
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let s = self.spatial();
        (i / s, (i % s) / self.nw, i % self.nw)
    }

    pub fn index(&self, tau: usize, rho: usize, kappa: usize) -> usize {
        (tau * self.nh + rho) * self.nw + kappa
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nt, self.nh, self.nw)
    }
}

/// The `N` patches of one input, one flattened patch per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T = f64> {
    pub shape: GridShape,
    pub cfg: PatchConfig,
    pub modality: Modality,
    /// `N × (t·h·w·3)`
    pub patches: Tensor<T>,
}

impl<T: Real> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.cfg.patch_len()
    }

    /// Same geometry with different patch contents (e.g. predictions).
    pub fn with_patches(&self, patches: Tensor<T>) -> Result<Self> {
        if patches.dims() != [self.len(), self.patch_len()] {
            return Err(Error::shape(format!(
                "patches {:?} do not fit grid {} with patch length {}",
                patches.dims(),
                self.shape,
                self.patch_len()
            )));
        }
        Ok(PatchGrid {
            patches,
            ..self.clone()
        })
    }
}

/// Repeats a single-frame image to `target_t` identical frames.
pub fn temporal_replicate<T: Real>(
    x: &VisualTensor<T>,
    target_t: usize,
) -> Result<VisualTensor<T>> {
    if x.modality() != Modality::Image || x.frames() != 1 {
        return Err(Error::Usage(
            "temporal replication applies to single-frame images only".into(),
        ));
    }
    if target_t == 0 {
        return Err(Error::param("target frame count must be ≥ 1"));
    }
    let frame = x.frame(0);
    let mut data = Vec::with_capacity(frame.len() * target_t);
    for _ in 0..target_t {
        data.extend_from_slice(frame);
    }
    let pixels = Tensor::from_vec(&[target_t, x.height(), x.width(), CHANNELS], data)?;
    Ok(VisualTensor {
        pixels,
        modality: Modality::Image,
    })
}

/// Replicates images to the patch depth; videos pass through.
pub fn prepare<T: Real>(x: &VisualTensor<T>, cfg: &PatchConfig) -> Result<VisualTensor<T>> {
    match x.modality() {
        Modality::Image if x.frames() == 1 => temporal_replicate(x, cfg.t),
        _ => Ok(x.clone()),
    }
}

pub fn patchify<T: Real>(x: &VisualTensor<T>, cfg: &PatchConfig) -> Result<PatchGrid<T>> {
    let (tt, hh, ww) = (x.frames(), x.height(), x.width());
    let shape = cfg.grid_for(tt, hh, ww)?;
    let p = cfg.patch_len();
    let src = x.pixels().data();
    let mut out = Vec::with_capacity(shape.len() * p);
    for i in 0..shape.len() {
        let (tau, rho, kappa) = shape.coords(i);
        for dt in 0..cfg.t {
            let f = tau * cfg.t + dt;
            for dy in 0..cfg.h {
                let y = rho * cfg.h + dy;
                let start = ((f * hh + y) * ww + kappa * cfg.w) * CHANNELS;
                out.extend_from_slice(&src[start..start + cfg.w * CHANNELS]);
            }
        }
    }
    Ok(PatchGrid {
        shape,
        cfg: *cfg,
        modality: x.modality(),
        patches: Tensor::from_vec(&[shape.len(), p], out)?,
    })
}

pub fn unpatchify<T: Real>(g: &PatchGrid<T>) -> Result<VisualTensor<T>> {
    let cfg = g.cfg;
    let (tt, hh, ww) = (g.shape.nt * cfg.t, g.shape.nh * cfg.h, g.shape.nw * cfg.w);
    if g.patches.dims() != [g.len(), cfg.patch_len()] {
        return Err(Error::shape("patch tensor does not match grid geometry"));
    }
    let mut out = vec![T::zero(); tt * hh * ww * CHANNELS];
    let span = cfg.w * CHANNELS;
    for i in 0..g.len() {
        let (tau, rho, kappa) = g.shape.coords(i);
        let row = g.patches.row(i);
        let mut off = 0;
        for dt in 0..cfg.t {
            let f = tau * cfg.t + dt;
            for dy in 0..cfg.h {
                let y = rho * cfg.h + dy;
                let start = ((f * hh + y) * ww + kappa * cfg.w) * CHANNELS;
                out[start..start + span].copy_from_slice(&row[off..off + span]);
                off += span;
            }
        }
    }
    let pixels = Tensor::from_vec(&[tt, hh, ww, CHANNELS], out)?;
    Ok(VisualTensor {
        pixels,
        modality: g.modality,
    })
}
