//! Omnivorous masked autoencoding for images and videos.
//!
//! Images and videos share one patch vocabulary (`t×h×w×3` blocks), one
//! encoder that only ever sees the kept patches, and one lightweight decoder
//! that reconstructs normalized pixels for the masked ones. Around that core
//! sit the data pipeline (sample replication, dataset ratios, an I/O
//! simulator) and an analytical compute model.

pub mod datapipe;
pub mod error;
pub mod flops;
pub mod kv;
pub mod masking;
pub mod model;
pub mod ndcore;
pub mod objective;
pub mod patchify;
pub mod ppm;
pub mod reconstruct;
pub mod run;
pub mod trainer;

pub use error::{Error, Result};
