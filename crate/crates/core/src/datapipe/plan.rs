//! Epoch plans: single-modality mini-batches with sample replication and
//! per-dataset oversampling ratios.
//!
//! For a dataset of `n` samples with ratio `q` the epoch has `n·q` batch
//! slots. The sample order is `q` back-to-back seeded permutations of
//! `0..n`. With replication `R`, the first `n·q/R` entries of that order are
//! loaded and each fills `R` consecutive slots, so the number of steps does
//! not depend on `R` while the number of loads shrinks by exactly `R`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ndcore::{mix64, Rng};
use crate::patchify::Modality;

use super::DatasetHandle;

/// Replication factor per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replication {
    pub image: usize,
    pub video: usize,
}

impl Replication {
    pub const NONE: Replication = Replication { image: 1, video: 1 };

    pub fn uniform(r: usize) -> Self {
        Replication { image: r, video: r }
    }

    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Image => self.image,
            Modality::Video => self.video,
        }
    }
}

impl Default for Replication {
    fn default() -> Self {
        Replication { image: 1, video: 4 }
    }
}

/// Per-dataset planning parameters recorded in the plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanDataset {
    pub name: String,
    pub modality: Modality,
    pub count: usize,
    pub ratio: usize,
    pub replication: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedBatch {
    /// Index into [`BatchPlan::datasets`].
    pub dataset: usize,
    pub modality: Modality,
    /// Sample id per slot; replicas of one sample occupy consecutive slots.
    pub ids: Vec<usize>,
    /// Mask seed per slot, pairwise distinct within the batch.
    pub mask_seeds: Vec<u64>,
}

impl PlannedBatch {
    /// Distinct ids in first-appearance order, i.e. the samples to load.
    pub fn distinct(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        self.ids
            .iter()
            .copied()
            .filter(|i| seen.insert(*i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub datasets: Vec<PlanDataset>,
    pub batches: Vec<PlannedBatch>,
}

impl BatchPlan {
    pub fn steps(&self) -> usize {
        self.batches.len()
    }

    /// Samples that must be read from storage over the epoch.
    pub fn distinct_loads(&self) -> usize {
        self.batches.iter().map(|b| b.distinct().len()).sum()
    }

    pub fn steps_for(&self, m: Modality) -> usize {
        self.batches.iter().filter(|b| b.modality == m).count()
    }

    /// Slot occurrences of `id` in dataset `dataset`.
    pub fn occurrences(&self, dataset: usize, id: usize) -> usize {
        self.batches
            .iter()
            .filter(|b| b.dataset == dataset)
            .map(|b| b.ids.iter().filter(|&&i| i == id).count())
            .sum()
    }

    /// Line-oriented text form, readable by [`BatchPlan::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("omnimae-plan v1\n");
        let _ = writeln!(s, "batch_size {}", self.batch_size);
        let _ = writeln!(s, "seed {}", self.seed);
        for d in &self.datasets {
            let _ = writeln!(
                s,
                "dataset {} {} {} {} {}",
                d.name, d.modality, d.count, d.ratio, d.replication
            );
        }
        for b in &self.batches {
            let ids: Vec<String> = b.ids.iter().map(|i| i.to_string()).collect();
            let seeds: Vec<String> = b.mask_seeds.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(
                s,
                "batch {} {} {}",
                b.dataset,
                ids.join(","),
                seeds.join(",")
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<plan>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "omnimae-plan v1")) => {}
            _ => return Err(bad(1, "missing omnimae-plan v1 header")),
        }
        let mut plan = BatchPlan {
            batch_size: 0,
            seed: 0,
            datasets: Vec::new(),
            batches: Vec::new(),
        };
        for (i, line) in lines {
            let n = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(n, &format!("bad number {v:?}")))
            };
            let list = |v: &str| -> Result<Vec<u64>> { v.split(',').map(num).collect() };
            match f[..] {
                [] => {}
                ["batch_size", v] => plan.batch_size = num(v)? as usize,
                ["seed", v] => plan.seed = num(v)?,
                ["dataset", name, m, count, ratio, r] => plan.datasets.push(PlanDataset {
                    name: name.to_string(),
                    modality: m.parse().map_err(|_| bad(n, "bad modality"))?,
                    count: num(count)? as usize,
                    ratio: num(ratio)? as usize,
                    replication: num(r)? as usize,
                }),
                ["batch", d, ids, seeds] => {
                    let d = num(d)? as usize;
                    let modality = plan
                        .datasets
                        .get(d)
                        .ok_or_else(|| bad(n, "batch refers to an unknown dataset"))?
                        .modality;
                    let ids: Vec<usize> = list(ids)?.into_iter().map(|v| v as usize).collect();
                    let mask_seeds = list(seeds)?;
                    if ids.len() != plan.batch_size || mask_seeds.len() != plan.batch_size {
                        return Err(bad(n, "batch does not have batch_size slots"));
                    }
                    plan.batches.push(PlannedBatch {
                        dataset: d,
                        modality,
                        ids,
                        mask_seeds,
                    });
                }
                _ => return Err(bad(n, &format!("unrecognized line {line:?}"))),
            }
        }
        Ok(plan)
    }
}

/// Moves duplicate ids out of each group of `k` consecutive entries by
/// swapping with later entries. Multiset counts are unchanged.
fn spread_duplicates(seq: &mut [usize], k: usize) {
    let groups = seq.len() / k;
    for g in 0..groups {
        let (lo, hi) = (g * k, (g + 1) * k);
        let mut seen = HashSet::new();
        for pos in lo..hi {
            if seen.insert(seq[pos]) {
                continue;
            }
            let dup = seq[pos];
            let swap = (hi..seq.len()).find(|&j| {
                let (jlo, jhi) = ((j / k) * k, ((j / k + 1) * k).min(seq.len()));
                !seen.contains(&seq[j]) && !seq[jlo..jhi].contains(&dup)
            });
            if let Some(j) = swap {
                seq.swap(pos, j);
                seen.insert(seq[pos]);
            }
        }
    }
}

/// Builds one epoch. `ratios[i]` is the oversampling multiplier of
/// `datasets[i]`; every dataset must fill whole batches, i.e.
/// `count·ratio` divisible by `batch_size`.
pub fn build_epoch_plan(
    datasets: &[DatasetHandle],
    batch_size: usize,
    replication: Replication,
    ratios: &[usize],
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be ≥ 1"));
    }
    if ratios.len() != datasets.len() {
        return Err(Error::param(format!(
            "{} ratios for {} datasets",
            ratios.len(),
            datasets.len()
        )));
    }
    let rng = Rng::new(seed);
    let mut batches = Vec::new();
    let mut meta = Vec::new();
    for (d, (ds, &ratio)) in datasets.iter().zip(ratios).enumerate() {
        let r = replication.get(ds.modality);
        if r == 0 || !batch_size.is_multiple_of(r) {
            return Err(Error::param(format!(
                "replication {r} for {} does not divide batch size {batch_size}",
                ds.modality
            )));
        }
        if ratio == 0 {
            return Err(Error::param(format!("dataset {} has ratio 0", ds.name)));
        }
        let slots = ds.count * ratio;
        if slots % batch_size != 0 {
            return Err(Error::param(format!(
                "dataset {} contributes {slots} slots per epoch, not a multiple of batch size {batch_size}",
                ds.name
            )));
        }
        let per_batch = batch_size / r;
        let mut order = Vec::with_capacity(slots);
        for pass in 0..ratio {
            let mut perm: Vec<usize> = (0..ds.count).collect();
            perm.shuffle(&mut rng.stream(&format!("plan/{}", ds.name), pass as u64));
            order.extend(perm);
        }
        let loads = &mut order[..slots / r];
        spread_duplicates(loads, per_batch);
        for chunk in loads.chunks(per_batch) {
            let ids: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| std::iter::repeat_n(i, r))
                .collect();
            batches.push(PlannedBatch {
                dataset: d,
                modality: ds.modality,
                ids,
                mask_seeds: Vec::new(),
            });
        }
        meta.push(PlanDataset {
            name: ds.name.clone(),
            modality: ds.modality,
            count: ds.count,
            ratio,
            replication: r,
        });
    }
    batches.shuffle(&mut rng.stream("plan/order", 0));
    for (b, batch) in batches.iter_mut().enumerate() {
        let base = mix64(seed ^ 0x706c_616e, b as u64);
        batch.mask_seeds = (0..batch_size as u64).map(|s| mix64(base, s)).collect();
    }
    Ok(BatchPlan {
        batch_size,
        seed,
        datasets: meta,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(name: &str, m: Modality, n: usize) -> DatasetHandle {
        let frames = if m == Modality::Image { 1 } else { 4 };
        DatasetHandle::synthetic(name, m, n, 0, frames, 32, 32).unwrap()
    }

    #[test]
    fn counting_example() {
        let d = [ds("img", Modality::Image, 8), ds("vid", Modality::Video, 8)];
        let p = build_epoch_plan(&d, 4, Replication::NONE, &[1, 1], 3).unwrap();
        assert_eq!(p.steps(), 4);
        assert_eq!(p.steps_for(Modality::Image), 2);
        assert_eq!(p.steps_for(Modality::Video), 2);
        for (k, x) in d.iter().enumerate() {
            for id in 0..x.count {
                assert_eq!(p.occurrences(k, id), 1);
            }
        }
    }

    #[test]
    fn video_replication_four() {
        let d = [ds("vid", Modality::Video, 8)];
        let p = build_epoch_plan(&d, 4, Replication { image: 1, video: 4 }, &[1], 3).unwrap();
        assert_eq!(p.steps(), 2);
        for b in &p.batches {
            assert_eq!(b.distinct().len(), 1);
            assert!(b.ids.iter().all(|&i| i == b.ids[0]));
            let s: HashSet<u64> = b.mask_seeds.iter().copied().collect();
            assert_eq!(s.len(), 4);
        }
    }

    #[test]
    fn ratio_multiset_and_distinct_batches() {
        for (n, ri, rv) in [(8, 1, 2), (8, 2, 1), (6, 2, 2), (10, 2, 2)] {
            let d = [ds("img", Modality::Image, n), ds("vid", Modality::Video, n)];
            let p = build_epoch_plan(&d, 4, Replication::NONE, &[ri, rv], 9).unwrap();
            for id in 0..n {
                assert_eq!(p.occurrences(0, id), ri);
                assert_eq!(p.occurrences(1, id), rv);
            }
            for b in &p.batches {
                assert_eq!(b.distinct().len(), 4, "{:?}", b.ids);
            }
        }
    }

    #[test]
    fn errors() {
        let d = [ds("img", Modality::Image, 8)];
        assert!(matches!(
            build_epoch_plan(&d, 4, Replication::uniform(3), &[1], 0),
            Err(Error::Parameter(_))
        ));
        assert!(build_epoch_plan(&d, 3, Replication::NONE, &[1], 0).is_err());
        assert!(build_epoch_plan(&d, 4, Replication::NONE, &[0], 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = [ds("img", Modality::Image, 8), ds("vid", Modality::Video, 8)];
        let p = build_epoch_plan(&d, 4, Replication { image: 1, video: 2 }, &[1, 2], 5).unwrap();
        assert_eq!(BatchPlan::from_text(&p.to_text()).unwrap(), p);
        assert!(BatchPlan::from_text("nope\n").is_err());
    }
}
