//! Reconstruction targets and the masked squared-error loss.
//!
//! Targets are the raw 0–255 patch pixels normalized per patch and per color
//! channel. Patch rows are laid out `t, h, w, c` with the channel fastest, so
//! element `j` of a row belongs to channel `j % 3`.

use crate::error::{Error, Result};
use crate::masking::Mask;
use crate::ndcore::{Real, Tape, Tensor, Var};
use crate::patchify::{PatchGrid, CHANNELS};

/// Added to the variance under the square root.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTargets<T = f64> {
    /// `N×p` normalized targets.
    pub values: Tensor<T>,
    /// `N×3` per-patch channel means.
    pub mean: Tensor<T>,
    /// `N×3` per-patch channel population variances.
    pub var: Tensor<T>,
    pub eps: T,
}

/// Per-channel `(mean, population variance)` of one patch row.
pub fn channel_stats<T: Real>(row: &[T]) -> [(T, T); CHANNELS] {
    let per = T::lit((row.len() / CHANNELS) as f64);
    let mut out = [(T::zero(), T::zero()); CHANNELS];
    for (c, slot) in out.iter_mut().enumerate() {
        let mean = row
            .iter()
            .skip(c)
            .step_by(CHANNELS)
            .fold(T::zero(), |a, &v| a + v)
            / per;
        let var = row
            .iter()
            .skip(c)
            .step_by(CHANNELS)
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / per;
        *slot = (mean, var);
    }
    out
}

pub fn normalize_targets<T: Real>(g: &PatchGrid<T>, eps: T) -> NormalizedTargets<T> {
    let (n, p) = (g.len(), g.patch_len());
    let mut values = Vec::with_capacity(n * p);
    let mut mean = Vec::with_capacity(n * CHANNELS);
    let mut var = Vec::with_capacity(n * CHANNELS);
    for i in 0..n {
        let row = g.patches.row(i);
        let stats = channel_stats(row);
        for (j, &v) in row.iter().enumerate() {
            let (mu, s2) = stats[j % CHANNELS];
            values.push((v - mu) / (s2 + eps).sqrt());
        }
        for (mu, s2) in stats {
            mean.push(mu);
            var.push(s2);
        }
    }
    NormalizedTargets {
        values: Tensor::from_vec(&[n, p], values).expect("grid is non-empty"),
        mean: Tensor::from_vec(&[n, CHANNELS], mean).expect("grid is non-empty"),
        var: Tensor::from_vec(&[n, CHANNELS], var).expect("grid is non-empty"),
        eps,
    }
}

fn check_shapes<T: Real>(pred: &Tensor<T>, t: &NormalizedTargets<T>, m: &Mask) -> Result<()> {
    if pred.dims() != t.values.dims() {
        return Err(Error::shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.dims(),
            t.values.dims()
        )));
    }
    if m.total() != pred.rows() {
        return Err(Error::shape(format!(
            "mask over {} patches, predictions have {} rows",
            m.total(),
            pred.rows()
        )));
    }
    if m.masked_count() == 0 {
        return Err(Error::param(
            "loss over an empty set of masked patches is undefined",
        ));
    }
    Ok(())
}

/// Mean over masked patches of the per-element squared error, recorded on `tape`.
pub fn masked_mse_on<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    targets: &NormalizedTargets<T>,
    m: &Mask,
) -> Result<Var> {
    check_shapes(tape.value(pred), targets, m)?;
    let picked = tape.gather_rows(pred, m.masked())?;
    let want = tape.constant(targets.values.gather_rows(m.masked())?);
    let diff = tape.sub(picked, want)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

pub fn masked_mse<T: Real>(
    pred: &Tensor<T>,
    targets: &NormalizedTargets<T>,
    m: &Mask,
) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let loss = masked_mse_on(&mut tape, p, targets, m)?;
    tape.value(loss).item()
}

/// Maps normalized predictions back to pixel space, clamped to `[0, 255]`.
pub fn denormalize<T: Real>(pred: &Tensor<T>, targets: &NormalizedTargets<T>) -> Result<Tensor<T>> {
    denormalize_unclamped(pred, targets).map(|t| t.map(|v| v.max(T::zero()).min(T::lit(255.0))))
}

/// [`denormalize`] without the final clamp.
pub fn denormalize_unclamped<T: Real>(
    pred: &Tensor<T>,
    targets: &NormalizedTargets<T>,
) -> Result<Tensor<T>> {
    if pred.dims() != targets.values.dims() {
        return Err(Error::shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.dims(),
            targets.values.dims()
        )));
    }
    let p = pred.last_dim();
    let mut out = pred.clone();
    for (i, row) in out.data_mut().chunks_mut(p).enumerate() {
        let mu = targets.mean.row(i);
        let s2 = targets.var.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            let c = j % CHANNELS;
            *v = *v * (s2[c] + targets.eps).sqrt() + mu[c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::masking::MaskSpec;
    use crate::ndcore::Rng;
    use crate::patchify::{GridShape, Modality, PatchConfig};

    fn grid(patches: Tensor) -> PatchGrid {
        let n = patches.rows();
        PatchGrid {
            shape: GridShape::new(1, 1, n),
            cfg: PatchConfig::new(1, 2, 2).unwrap(),
            modality: Modality::Image,
            patches,
        }
    }

    fn random(n: usize, seed: u64) -> Tensor {
        let mut s = Rng::new(seed).stream("objective.test", 0);
        Tensor::from_vec(
            &[n, 12],
            (0..n * 12)
                .map(|_| s.random_range(0..=255) as f64)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_patch_normalizes_to_zero() {
        let t = normalize_targets(&grid(Tensor::full(&[1, 12], 128.0)), DEFAULT_EPS);
        assert!(t.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(t.mean.row(0), &[128.0; 3]);
    }

    #[test]
    fn two_value_channel_maps_to_unit() {
        // channel 0 alternates 0 and 255 across the four pixels
        let mut d = vec![10.0; 12];
        for (k, px) in [0.0, 255.0, 0.0, 255.0].into_iter().enumerate() {
            d[3 * k] = px;
        }
        let t = normalize_targets(
            &grid(Tensor::from_vec(&[1, 12], d.clone()).unwrap()),
            DEFAULT_EPS,
        );
        for k in 0..4 {
            let want = (d[3 * k] - 127.5) / 127.5;
            assert!((t.values.data()[3 * k] - want).abs() < 1e-4);
        }
    }

    #[test]
    fn inverse_transform_recovers_raw() {
        let raw = random(20, 1);
        let t = normalize_targets(&grid(raw.clone()), DEFAULT_EPS);
        let back = denormalize_unclamped(&t.values, &t).unwrap();
        assert!(back.max_abs_diff(&raw) < 1e-10);
        assert!(denormalize(&t.values, &t).unwrap().max_abs_diff(&raw) < 1e-10);
    }

    #[test]
    fn zero_prediction_gives_means_and_clamp_applies() {
        let raw = random(3, 2);
        let t = normalize_targets(&grid(raw), DEFAULT_EPS);
        let out = denormalize(&Tensor::zeros(&[3, 12]), &t).unwrap();
        for i in 0..3 {
            for j in 0..12 {
                assert!((out.row(i)[j] - t.mean.row(i)[j % 3]).abs() < 1e-12);
            }
        }
        let mut t1 = t.clone();
        t1.mean = Tensor::full(&[3, 3], 250.0);
        t1.var = Tensor::full(&[3, 3], 100.0 - t1.eps);
        let out = denormalize(&Tensor::full(&[3, 12], 10.0), &t1).unwrap();
        assert!(out.data().iter().all(|&v| v == 255.0));
    }

    #[test]
    fn loss_closed_forms_and_loop_oracle() {
        let raw = random(6, 3);
        let t = normalize_targets(&grid(raw), DEFAULT_EPS);
        let m = Mask::from_kept(6, vec![1, 4], MaskSpec::random(0.5, 0).unwrap()).unwrap();
        assert_eq!(masked_mse(&t.values, &t, &m).unwrap(), 0.0);
        let plus = t.values.map(|v| v + 1.0);
        assert!((masked_mse(&plus, &t, &m).unwrap() - 1.0).abs() < 1e-12);

        let pred = random(6, 4).map(|v| v / 100.0);
        let mut acc = 0.0;
        for &i in m.masked() {
            let mut row = 0.0;
            for j in 0..12 {
                let d = pred.row(i)[j] - t.values.row(i)[j];
                row += d * d;
            }
            acc += row / 12.0;
        }
        let want = acc / m.masked_count() as f64;
        assert!((masked_mse(&pred, &t, &m).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn kept_rows_get_zero_gradient() {
        let raw = random(5, 5);
        let t = normalize_targets(&grid(raw), DEFAULT_EPS);
        let m = Mask::from_kept(5, vec![0, 3], MaskSpec::random(0.5, 0).unwrap()).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(random(5, 6).map(|v| v / 255.0));
        let loss = masked_mse_on(&mut tape, p, &t, &m).unwrap();
        let g = tape.backward(loss).unwrap();
        let g = g.get(p).unwrap();
        for &i in m.kept() {
            assert!(g.row(i).iter().all(|&v| v == 0.0));
        }
        assert!(g.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn empty_masked_set_is_rejected() {
        let raw = random(2, 7);
        let t = normalize_targets(&grid(raw), DEFAULT_EPS);
        let m = Mask::from_kept(2, vec![0, 1], MaskSpec::random(0.0, 0).unwrap()).unwrap();
        assert!(matches!(
            masked_mse(&t.values, &t, &m),
            Err(Error::Parameter(_))
        ));
    }
}
