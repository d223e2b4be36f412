//! Discrete-event model of an I/O-bound input pipeline.
//!
//! Loads are issued in plan order, one per distinct sample. A load holds one
//! of `in_flight` request slots from the moment it is issued until its decode
//! finishes; the read takes `read_ms` plus a jitter keyed by the load's
//! position, and the decode runs on the earliest free of `workers` decoders.
//! Batches are delivered in plan order: a batch is ready once its own loads
//! and every earlier load have finished. Compute consumes ready batches at
//! `compute_ms` per step. Replicated slots cost nothing.
//!
//! Timings of load `j` depend only on its position, so batch `b` of a plan
//! with replication `R` becomes ready no later than batch `b` of the same
//! plan without replication, and epoch time is non-increasing in `R`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ndcore::Rng;

use super::BatchPlan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoModel {
    /// Mean read latency per sample.
    pub read_ms: f64,
    /// Reads are uniform in `read_ms ± jitter_ms`, floored at zero.
    pub jitter_ms: f64,
    pub decode_ms: f64,
    pub compute_ms: f64,
    pub workers: usize,
    pub in_flight: usize,
}

impl IoModel {
    /// Video-like costs: slow reads and decodes against a moderate step time.
    pub fn video_like() -> Self {
        IoModel {
            read_ms: 40.0,
            jitter_ms: 10.0,
            decode_ms: 60.0,
            compute_ms: 50.0,
            workers: 8,
            in_flight: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.read_ms) && ok(self.jitter_ms) && ok(self.decode_ms) && ok(self.compute_ms)) {
            return Err(Error::param("I/O model costs must be finite and ≥ 0"));
        }
        if self.workers == 0 || self.in_flight == 0 {
            return Err(Error::param(
                "I/O model needs at least one worker and one in-flight slot",
            ));
        }
        Ok(())
    }
}

/// Event times of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchTiming {
    pub loads: usize,
    pub ready_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Makespan: end of the last compute step.
    pub epoch_ms: f64,
    pub distinct_loads: usize,
    pub steps: usize,
    pub batches: Vec<BatchTiming>,
}

/// Totally ordered `f64` for the event heaps; all times are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn simulate_epoch(plan: &BatchPlan, io: &IoModel, seed: u64) -> Result<SimReport> {
    io.validate()?;
    let rng = Rng::new(seed);
    let mut slots: BinaryHeap<Reverse<Time>> =
        (0..io.in_flight).map(|_| Reverse(Time(0.0))).collect();
    let mut workers: BinaryHeap<Reverse<Time>> =
        (0..io.workers).map(|_| Reverse(Time(0.0))).collect();
    let mut load_index = 0u64;
    let mut prev_end = 0.0f64;
    let mut batches = Vec::with_capacity(plan.batches.len());
    // batches are delivered in plan order, so readiness is a running maximum
    let mut ready = 0.0f64;
    for b in &plan.batches {
        let loads = b.distinct().len();
        for _ in 0..loads {
            let jitter = if io.jitter_ms > 0.0 {
                rng.stream("sim/read", load_index)
                    .random_range(-io.jitter_ms..=io.jitter_ms)
            } else {
                0.0
            };
            load_index += 1;
            let Reverse(Time(issue)) = slots.pop().expect("in_flight ≥ 1");
            let read_done = issue + (io.read_ms + jitter).max(0.0);
            let Reverse(Time(free)) = workers.pop().expect("workers ≥ 1");
            let done = read_done.max(free) + io.decode_ms;
            workers.push(Reverse(Time(done)));
            slots.push(Reverse(Time(done)));
            ready = ready.max(done);
        }
        let start = ready.max(prev_end);
        let end = start + io.compute_ms;
        prev_end = end;
        batches.push(BatchTiming {
            loads,
            ready_ms: ready,
            start_ms: start,
            end_ms: end,
        });
    }
    Ok(SimReport {
        epoch_ms: prev_end,
        distinct_loads: load_index as usize,
        steps: batches.len(),
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{build_epoch_plan, DatasetHandle, Replication};
    use crate::patchify::Modality;

    fn plan(r: usize, b: usize, n: usize) -> BatchPlan {
        let d = [DatasetHandle::synthetic("vid", Modality::Video, n, 0, 4, 32, 32).unwrap()];
        build_epoch_plan(&d, b, Replication::uniform(r), &[1], 1).unwrap()
    }

    #[test]
    fn compute_bound_limit() {
        let io = IoModel {
            read_ms: 0.0,
            jitter_ms: 0.0,
            decode_ms: 0.0,
            compute_ms: 7.0,
            workers: 2,
            in_flight: 4,
        };
        let p = plan(1, 4, 32);
        let r = simulate_epoch(&p, &io, 0).unwrap();
        assert_eq!(r.epoch_ms, 8.0 * 7.0);
    }

    #[test]
    fn serial_io_limit() {
        let io = IoModel {
            read_ms: 3.0,
            jitter_ms: 0.0,
            decode_ms: 5.0,
            compute_ms: 0.0,
            workers: 1,
            in_flight: 1,
        };
        let p = plan(2, 4, 32);
        let r = simulate_epoch(&p, &io, 0).unwrap();
        assert_eq!(r.distinct_loads, 16);
        assert_eq!(r.epoch_ms, 16.0 * 8.0);
    }

    #[test]
    fn monotone_in_replication() {
        let io = IoModel::video_like();
        let times: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&r| simulate_epoch(&plan(r, 32, 256), &io, 4).unwrap().epoch_ms)
            .collect();
        for w in times.windows(2) {
            assert!(w[1] <= w[0], "{times:?}");
        }
        assert!(times[3] / times[0] <= 0.85, "{times:?}");
    }
}
