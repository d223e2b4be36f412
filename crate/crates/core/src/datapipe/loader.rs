//! Batch delivery for training.
//!
//! Producer threads materialize batches in whatever order they finish; the
//! consumer side reorders them so batches come out exactly in plan order,
//! each once.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::patchify::{Modality, VisualTensor};
use crate::trainer::Slot;

use super::{BatchPlan, DatasetHandle};

/// A materialized mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Position in the plan.
    pub index: usize,
    pub modality: Modality,
    /// Loaded samples, one per distinct id.
    pub samples: Vec<VisualTensor<f64>>,
    /// For every slot, the index into `samples` it uses.
    pub slot_sample: Vec<usize>,
    pub mask_seeds: Vec<u64>,
}

impl Batch {
    /// Trainer slots under `mask`, reseeded per slot from the plan.
    pub fn slots(&self, mask: MaskSpec) -> Vec<Slot<'_, f64>> {
        self.slot_sample
            .iter()
            .zip(&self.mask_seeds)
            .map(|(&s, &seed)| Slot {
                x: &self.samples[s],
                mask: mask.with_seed(seed),
            })
            .collect()
    }
}

/// Loads batch `index` of `plan`.
pub fn load_sample(plan: &BatchPlan, datasets: &[DatasetHandle], index: usize) -> Result<Batch> {
    let b = plan
        .batches
        .get(index)
        .ok_or_else(|| Error::Index(format!("batch {index} of {}", plan.batches.len())))?;
    let ds = datasets.get(b.dataset).ok_or_else(|| {
        Error::Index(format!(
            "plan refers to dataset {} of {}",
            b.dataset,
            datasets.len()
        ))
    })?;
    let distinct = b.distinct();
    let samples = distinct
        .iter()
        .map(|&id| ds.get(id))
        .collect::<Result<Vec<_>>>()?;
    let slot_sample = b
        .ids
        .iter()
        .map(|id| {
            distinct
                .iter()
                .position(|d| d == id)
                .expect("id is in its own batch")
        })
        .collect();
    Ok(Batch {
        index,
        modality: b.modality,
        samples,
        slot_sample,
        mask_seeds: b.mask_seeds.clone(),
    })
}

/// Iterator over a plan's batches backed by `workers` producer threads.
pub struct Loader {
    rx: Receiver<(usize, Result<Batch>)>,
    pending: BTreeMap<usize, Result<Batch>>,
    next: usize,
    total: usize,
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl Loader {
    /// `prefetch` bounds how many finished batches may wait in the channel.
    pub fn new(
        plan: BatchPlan,
        datasets: Vec<DatasetHandle>,
        workers: usize,
        prefetch: usize,
    ) -> Self {
        let total = plan.batches.len();
        let (tx, rx) = sync_channel(prefetch.max(1));
        let plan = Arc::new(plan);
        let datasets = Arc::new(datasets);
        let counter = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handles = (0..workers.max(1))
            .map(|_| {
                let (tx, plan, datasets, counter, stop) = (
                    tx.clone(),
                    Arc::clone(&plan),
                    Arc::clone(&datasets),
                    Arc::clone(&counter),
                    Arc::clone(&stop),
                );
                std::thread::spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let i = counter.fetch_add(1, Ordering::Relaxed);
                    if i >= plan.batches.len() {
                        return;
                    }
                    if tx.send((i, load_sample(&plan, &datasets, i))).is_err() {
                        return;
                    }
                })
            })
            .collect();
        Loader {
            rx,
            pending: BTreeMap::new(),
            next: 0,
            total,
            stop,
            handles,
        }
    }
}

impl Iterator for Loader {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        while !self.pending.contains_key(&self.next) {
            match self.rx.recv() {
                Ok((i, b)) => {
                    self.pending.insert(i, b);
                }
                Err(_) => {
                    let i = self.next;
                    self.next = self.total;
                    return Some(Err(Error::Usage(format!(
                        "loader stopped before batch {i}"
                    ))));
                }
            }
        }
        let out = self.pending.remove(&self.next);
        self.next += 1;
        out
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // drain so blocked producers can observe the stop flag
        while self.rx.try_recv().is_ok() {}
        for h in self.handles.drain(..) {
            while !h.is_finished() {
                while self.rx.try_recv().is_ok() {}
                std::thread::yield_now();
            }
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{build_epoch_plan, Replication};

    #[test]
    fn delivers_in_plan_order_exactly_once() {
        let ds = vec![
            DatasetHandle::synthetic("img", Modality::Image, 8, 1, 1, 32, 32).unwrap(),
            DatasetHandle::synthetic("vid", Modality::Video, 8, 1, 4, 32, 32).unwrap(),
        ];
        let plan =
            build_epoch_plan(&ds, 4, Replication { image: 1, video: 2 }, &[1, 1], 2).unwrap();
        let got: Vec<Batch> = Loader::new(plan.clone(), ds.clone(), 3, 1)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(got.len(), plan.steps());
        for (i, b) in got.iter().enumerate() {
            assert_eq!(b.index, i);
            assert_eq!(*b, load_sample(&plan, &ds, i).unwrap());
            assert_eq!(b.slot_sample.len(), 4);
            for (slot, &s) in b.slot_sample.iter().enumerate() {
                let id = plan.batches[i].ids[slot];
                assert_eq!(b.samples[s], ds[plan.batches[i].dataset].get(id).unwrap());
            }
        }
    }

    #[test]
    fn early_drop_does_not_hang() {
        let ds = vec![DatasetHandle::synthetic("img", Modality::Image, 32, 1, 1, 32, 32).unwrap()];
        let plan = build_epoch_plan(&ds, 4, Replication::NONE, &[1], 2).unwrap();
        let mut l = Loader::new(plan, ds, 2, 1);
        assert!(l.next().unwrap().is_ok());
        drop(l);
    }
}
