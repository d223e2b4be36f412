//! Fixed sinusoidal encodings, separable over (time, row, column).
//!
//! Of `dim` channels, `2·⌊dim/8⌋` go to the time coordinate and the rest is
//! split evenly (rounded down to even) between row and column. Leftover
//! channels stay zero. Each coordinate uses interleaved `sin, cos` pairs on
//! the usual geometric frequency ladder with base 10000.

use crate::error::{Error, Result};
use crate::ndcore::{Real, Tensor};
use crate::patchify::GridShape;

const BASE: f64 = 10_000.0;

/// Channel budget `(time, row, col)` for a given width.
pub fn channel_split(dim: usize) -> (usize, usize, usize) {
    let dt = 2 * (dim / 8);
    let rest = dim - dt;
    let ds = 2 * (rest / 4);
    (dt, ds, ds)
}

fn fill_axis(row: &mut [f64], pos: usize) {
    let pairs = row.len() / 2;
    for i in 0..pairs {
        let freq = BASE.powf(-(2.0 * i as f64) / row.len() as f64);
        let angle = pos as f64 * freq;
        row[2 * i] = angle.sin();
        row[2 * i + 1] = angle.cos();
    }
}

/// Encoding row for a single `(τ, ρ, κ)` position.
pub fn encode_position(dim: usize, tau: usize, rho: usize, kappa: usize) -> Vec<f64> {
    let (dt, dh, dw) = channel_split(dim);
    let mut out = vec![0.0; dim];
    fill_axis(&mut out[..dt], tau);
    fill_axis(&mut out[dt..dt + dh], rho);
    fill_axis(&mut out[dt + dh..dt + dh + dw], kappa);
    out
}

/// `N × dim` table in patch order.
pub fn positional_encoding<T: Real>(grid: GridShape, dim: usize) -> Result<Tensor<T>> {
    if dim < 6 || !dim.is_multiple_of(2) {
        return Err(Error::param(format!(
            "positional encoding width must be even and ≥ 6, got {dim}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::param("empty grid"));
    }
    let mut data = Vec::with_capacity(grid.len() * dim);
    for i in 0..grid.len() {
        let (tau, rho, kappa) = grid.coords(i);
        data.extend(
            encode_position(dim, tau, rho, kappa)
                .into_iter()
                .map(T::lit),
        );
    }
    Tensor::from_vec(&[grid.len(), dim], data)
}
