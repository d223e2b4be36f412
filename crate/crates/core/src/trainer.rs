//! AdamW training at toy scale, the overfit smoke test, and gradient checking.

use std::f64::consts::PI;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::model::{ModelParams, OmniMae};
use crate::ndcore::par::map_indexed;
use crate::ndcore::{mix64, BackwardFault, Real, Rng, Tape, Tensor};
use crate::objective::{masked_mse_on, normalize_targets, DEFAULT_EPS};
use crate::patchify::{Modality, VisualTensor};

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSpec {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_epochs: u64,
    pub total_epochs: u64,
    pub batch_size: usize,
}

impl Default for OptimSpec {
    fn default() -> Self {
        OptimSpec {
            lr: 3e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            warmup_epochs: 40,
            total_epochs: 800,
            batch_size: 2048,
        }
    }
}

impl OptimSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) || !finite_nonneg(self.weight_decay) {
            return Err(Error::param(
                "learning rate and weight decay must be finite and ≥ 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::param("adam eps must be positive"));
        }
        if self.total_epochs == 0 || self.warmup_epochs > self.total_epochs {
            return Err(Error::param(format!(
                "need 0 ≤ warmup ({}) ≤ total ({}) and total ≥ 1",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be ≥ 1"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to the peak, then cosine decay reaching 0 at the final
/// step `total_epochs·steps_per_epoch − 1`. Later steps stay at 0.
pub fn lr_at(step: u64, spec: &OptimSpec, steps_per_epoch: u64) -> f64 {
    let warmup = spec.warmup_epochs * steps_per_epoch;
    let last = (spec.total_epochs * steps_per_epoch).saturating_sub(1);
    if step < warmup {
        return spec.lr * step as f64 / warmup as f64;
    }
    if last <= warmup {
        return if step == warmup && step < last + 1 {
            spec.lr
        } else {
            0.0
        };
    }
    if step >= last {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (last - warmup) as f64;
    spec.lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Parameters, AdamW moments and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T = f64> {
    pub params: ModelParams<T>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: ModelParams<T>, seed: u64) -> Self {
        let zeros = |p: &ModelParams<T>| {
            p.tensors()
                .iter()
                .map(|t| Tensor::zeros(t.dims()))
                .collect()
        };
        TrainState {
            m: zeros(&params),
            v: zeros(&params),
            params,
            step: 0,
            epoch: 0,
            seed,
        }
    }

    pub fn init(model: &OmniMae, seed: u64) -> Self {
        Self::new(model.init_params(seed), seed)
    }
}

/// One batch slot: an input and the mask it is trained under.
#[derive(Debug, Clone, Copy)]
pub struct Slot<'a, T = f64> {
    pub x: &'a VisualTensor<T>,
    pub mask: MaskSpec,
}

/// Loss of one sample and its gradient per parameter (`None` where untouched).
pub type SampleGrads<T> = (T, Vec<Option<Tensor<T>>>);

/// Masked-reconstruction loss of one sample and its parameter gradients.
pub fn sample_grads<T: Real>(
    model: &OmniMae,
    params: &ModelParams<T>,
    slot: Slot<'_, T>,
    fault: Option<BackwardFault>,
) -> Result<SampleGrads<T>> {
    let grid = model.patchify(slot.x)?;
    let targets = normalize_targets(&grid, T::lit(DEFAULT_EPS));
    let mut tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let p = params.bind(&mut tape);
    let fv = model.forward_on(&mut tape, &p, &grid, &slot.mask)?;
    let loss = masked_mse_on(&mut tape, fv.pred, &targets, &fv.mask)?;
    let value = tape.value(loss).item()?;
    let mut g = tape.backward(loss)?;
    Ok((value, p.iter().map(|&v| g.take(v)).collect()))
}

/// Loss of one sample without building gradients.
pub fn sample_loss<T: Real>(
    model: &OmniMae,
    params: &ModelParams<T>,
    slot: Slot<'_, T>,
) -> Result<T> {
    let grid = model.patchify(slot.x)?;
    let targets = normalize_targets(&grid, T::lit(DEFAULT_EPS));
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let fv = model.forward_on(&mut tape, &p, &grid, &slot.mask)?;
    let loss = masked_mse_on(&mut tape, fv.pred, &targets, &fv.mask)?;
    tape.value(loss).item()
}

fn batch_modality<T: Real>(batch: &[Slot<'_, T>]) -> Result<Modality> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Usage("empty batch".into()))?
        .x
        .modality();
    if let Some(s) = batch.iter().find(|s| s.x.modality() != first) {
        return Err(Error::Usage(format!(
            "a mini-batch must hold one modality, found {first} and {}",
            s.x.modality()
        )));
    }
    Ok(first)
}

/// Mean loss and mean gradients over a single-modality batch.
///
/// Samples are evaluated in parallel; gradients are then summed in slot order,
/// so the result is bitwise identical with or without the `parallel` feature.
pub fn batch_grads<T: Real>(
    model: &OmniMae,
    params: &ModelParams<T>,
    batch: &[Slot<'_, T>],
) -> Result<SampleGrads<T>> {
    batch_modality(batch)?;
    let per = map_indexed(batch.len(), |i| sample_grads(model, params, batch[i], None));
    let mut loss = T::zero();
    let mut acc: Vec<Option<Tensor<T>>> = vec![None; params.len()];
    for r in per {
        let (l, grads) = r?;
        loss = loss + l;
        for (a, g) in acc.iter_mut().zip(grads) {
            match (a.as_mut(), g) {
                (Some(a), Some(g)) => {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x = *x + *y;
                    }
                }
                (None, Some(g)) => *a = Some(g),
                (_, None) => {}
            }
        }
    }
    let inv = T::lit(1.0 / batch.len() as f64);
    for g in acc.iter_mut().flatten() {
        for x in g.data_mut() {
            *x = *x * inv;
        }
    }
    Ok((loss * inv, acc))
}

/// One AdamW update with decoupled weight decay. Parameters whose gradient is
/// `None` are left untouched, moments included.
pub fn adamw_update<T: Real>(
    model: &OmniMae,
    state: &mut TrainState<T>,
    grads: &[Option<Tensor<T>>],
    opt: &OptimSpec,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.params.len()
        )));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - opt.beta1.powf(t as f64);
    let bc2 = 1.0 - opt.beta2.powf(t as f64);
    let (b1, b2) = (T::lit(opt.beta1), T::lit(opt.beta2));
    let (one, eps, lr_t) = (T::one(), T::lit(opt.eps), T::lit(lr));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let specs = &model.layout().specs;
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let decay = if specs[i].decay {
            one - lr_t * T::lit(opt.weight_decay)
        } else {
            one
        };
        let p = &mut state.params.tensors_mut()[i];
        if g.dims() != p.dims() {
            return Err(Error::shape(format!(
                "{}: gradient {:?} vs parameter {:?}",
                specs[i].name,
                g.dims(),
                p.dims()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

/// Forward, backward and AdamW update on one single-modality batch.
/// Returns the batch loss measured before the update.
pub fn train_step<T: Real>(
    model: &OmniMae,
    state: &mut TrainState<T>,
    batch: &[Slot<'_, T>],
    opt: &OptimSpec,
    lr: f64,
) -> Result<T> {
    let (loss, grads) = batch_grads(model, &state.params, batch)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at step {}",
            state.step
        )));
    }
    adamw_update(model, state, &grads, opt, lr)?;
    Ok(loss)
}

/// Mask seed for slot `slot` of step `step`, distinct across slots and steps.
pub fn slot_mask_seed(seed: u64, step: u64, slot: usize) -> u64 {
    mix64(mix64(seed ^ 0x6d61_736b, step), slot as u64)
}

/// How the overfit loop assigns masks across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSchedule {
    /// Each sample keeps one mask for the whole run.
    Fixed,
    /// Every step draws new masks.
    Fresh,
}

/// Per-step losses of an overfit run.
#[derive(Debug, Clone, PartialEq)]
pub struct OverfitTrace<T = f64> {
    /// `(modality, loss)` per step, in order.
    pub steps: Vec<(Modality, T)>,
    /// Mean loss per modality under the evaluation masks, before training.
    pub initial: Vec<(Modality, T)>,
    /// Same, after training.
    pub final_: Vec<(Modality, T)>,
}

impl<T: Real> OverfitTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `final / initial` for `modality`, if it was trained.
    pub fn ratio(&self, modality: Modality) -> Option<f64> {
        let i = self.initial.iter().find(|(m, _)| *m == modality)?.1;
        let f = self.final_.iter().find(|(m, _)| *m == modality)?.1;
        Some(f.to_f64_lossy() / i.to_f64_lossy())
    }
}

/// Overfits a handful of samples: each step takes every sample of one
/// modality as its batch, alternating modalities. Initial and final losses
/// are measured with each sample's evaluation mask (its step-0 mask).
pub fn overfit<T: Real>(
    model: &OmniMae,
    state: &mut TrainState<T>,
    data: &[VisualTensor<T>],
    mask: MaskSpec,
    opt: &OptimSpec,
    schedule: MaskSchedule,
    steps: u64,
) -> Result<OverfitTrace<T>> {
    let mut groups: Vec<(Modality, Vec<usize>)> = Vec::new();
    for m in Modality::ALL {
        let ids: Vec<usize> = (0..data.len())
            .filter(|&i| data[i].modality() == m)
            .collect();
        if ids.len() > 8 {
            return Err(Error::param(format!(
                "overfit takes at most 8 samples per modality, got {} {m}s",
                ids.len()
            )));
        }
        if !ids.is_empty() {
            groups.push((m, ids));
        }
    }
    if groups.is_empty() {
        return Err(Error::param("overfit needs at least one sample"));
    }
    let mask_for = |i: usize, step: u64| {
        let step = match schedule {
            MaskSchedule::Fixed => 0,
            MaskSchedule::Fresh => step,
        };
        mask.with_seed(slot_mask_seed(mask.seed, step, i))
    };
    let eval = |params: &ModelParams<T>| -> Result<Vec<(Modality, T)>> {
        groups
            .iter()
            .map(|(m, ids)| {
                let mut acc = T::zero();
                for &i in ids {
                    acc = acc
                        + sample_loss(
                            model,
                            params,
                            Slot {
                                x: &data[i],
                                mask: mask_for(i, 0),
                            },
                        )?;
                }
                Ok((*m, acc / T::lit(ids.len() as f64)))
            })
            .collect()
    };
    let initial = eval(&state.params)?;
    let mut trace = Vec::with_capacity(steps as usize);
    let schedule_spec = OptimSpec {
        total_epochs: steps.max(1),
        warmup_epochs: opt.warmup_epochs.min(steps),
        ..*opt
    };
    for s in 0..steps {
        let (m, ids) = &groups[(s as usize) % groups.len()];
        let batch: Vec<Slot<'_, T>> = ids
            .iter()
            .map(|&i| Slot {
                x: &data[i],
                mask: mask_for(i, s),
            })
            .collect();
        let lr = lr_at(s, &schedule_spec, 1);
        let loss = train_step(model, state, &batch, &schedule_spec, lr)?;
        trace.push((*m, loss));
    }
    let final_ = eval(&state.params)?;
    Ok(OverfitTrace {
        steps: trace,
        initial,
        final_,
    })
}

/// Step size of the central differences in [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Coordinates probed per parameter tensor.
pub const GRAD_CHECK_PROBES: usize = 64;
/// Denominator floor of the relative error. Central differences of a
/// double-precision loss near 1 carry roughly 1e-9 of roundoff, so smaller
/// gradients are compared on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// Compares tape gradients of the masked loss with central differences over
/// up to 64 random coordinates of every parameter tensor.
pub fn grad_check(
    model: &OmniMae,
    params: &ModelParams<f64>,
    x: &VisualTensor<f64>,
    mask: MaskSpec,
    fault: Option<BackwardFault>,
    seed: u64,
) -> Result<GradCheckReport> {
    let slot = Slot { x, mask };
    let (_, grads) = sample_grads(model, params, slot, fault)?;
    let rng = Rng::new(seed);
    let specs = &model.layout().specs;
    let probes: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let n: usize = s.dims.iter().product();
            let k = n.min(GRAD_CHECK_PROBES);
            let mut st = rng.stream(&format!("gradcheck/{}", s.name), 0);
            let mut coords = index::sample(&mut st, n, k).into_vec();
            coords.sort_unstable();
            coords.into_iter().map(move |c| (i, c))
        })
        .collect();
    let numeric = map_indexed(probes.len(), |j| -> Result<f64> {
        let (i, c) = probes[j];
        let mut p = params.clone();
        let base = p.get(i).data()[c];
        p.tensors_mut()[i].data_mut()[c] = base + GRAD_CHECK_STEP;
        let up = sample_loss(model, &p, slot)?;
        p.tensors_mut()[i].data_mut()[c] = base - GRAD_CHECK_STEP;
        let down = sample_loss(model, &p, slot)?;
        Ok((up - down) / (2.0 * GRAD_CHECK_STEP))
    });
    let mut worst = GradCheckReport {
        max_rel_err: 0.0,
        param: String::new(),
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        probes: probes.len(),
    };
    for (&(i, c), num) in probes.iter().zip(numeric) {
        let num = num?;
        let ana = grads[i].as_ref().map_or(0.0, |g| g.data()[c]);
        let err = (ana - num).abs() / ana.abs().max(num.abs()).max(GRAD_CHECK_FLOOR);
        if err > worst.max_rel_err || worst.param.is_empty() {
            worst = GradCheckReport {
                max_rel_err: err,
                param: specs[i].name.clone(),
                coord: c,
                analytic: ana,
                numeric: num,
                probes: probes.len(),
            };
        }
    }
    Ok(worst)
}
