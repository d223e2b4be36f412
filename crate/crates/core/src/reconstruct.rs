//! Reconstruction rendering: predictions for the masked patches composited
//! with the untouched ground truth of the kept ones.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::masking::{Mask, MaskSpec};
use crate::model::{ModelParams, OmniMae};
use crate::objective::{denormalize, normalize_targets, DEFAULT_EPS};
use crate::patchify::{unpatchify, Modality, PatchGrid, VisualTensor};
use crate::ppm;

/// Result of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Whole-number pixels, same extents as the input.
    pub composite: VisualTensor<f64>,
    /// Predictions for every patch in pixel space, before compositing.
    pub predicted: PatchGrid<f64>,
    pub mask: Mask,
}

/// Runs the model at `spec` and composites: kept patches are copied from the
/// input, masked patches come from the de-normalized, rounded predictions.
pub fn reconstruct(
    model: &OmniMae,
    params: &ModelParams<f64>,
    x: &VisualTensor<f64>,
    spec: &MaskSpec,
) -> Result<Reconstruction> {
    let (pred, mask, grid) = model.forward(params, x, spec)?;
    let targets = normalize_targets(&grid, DEFAULT_EPS);
    let pixels = denormalize(&pred, &targets)?.map(f64::round);
    let p = grid.patch_len();
    let mut patches = grid.patches.clone();
    for &i in mask.masked() {
        patches.data_mut()[i * p..(i + 1) * p].copy_from_slice(pixels.row(i));
    }
    let full = unpatchify(&grid.with_patches(patches)?)?;
    let composite = match x.modality() {
        // images were replicated in time for patching; frame 0 is the output
        Modality::Image => {
            let frame = full.frame(0).to_vec();
            let dims = [1, x.height(), x.width(), 3];
            VisualTensor::image(crate::ndcore::Tensor::from_vec(&dims, frame)?)?
        }
        Modality::Video => full,
    };
    Ok(Reconstruction {
        composite,
        predicted: grid.with_patches(pixels)?,
        mask,
    })
}

/// Writes `frame_NNN.ppm` for every frame of `x` into `dir`.
pub fn write_frames(x: &VisualTensor<f64>, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = x.to_bytes();
    let n = x.height() * x.width() * 3;
    (0..x.frames())
        .map(|k| {
            let path = dir.join(format!("frame_{k:03}.ppm"));
            ppm::write(
                &path,
                x.width(),
                x.height(),
                &bytes.data()[k * n..(k + 1) * n],
            )?;
            Ok(path)
        })
        .collect()
}

/// Directory name used for ratio `r`, e.g. `r0.90`.
pub fn ratio_dir(r: f64) -> String {
    format!("r{r:.2}")
}
