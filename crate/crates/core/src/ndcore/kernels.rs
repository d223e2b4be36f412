//! Forward kernels over [`Tensor`]. The tape wraps these and adds backward rules.

use crate::error::{Error, Result};

use super::par::for_each_row_mut;
use super::tensor::{Real, Tensor};

fn same_dims<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{op}: dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul: inner dims disagree ({m}×{k} · {k2}×{n})"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for_each_row_mut(&mut out, n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bpj) in row.iter_mut().zip(brow) {
                *o = *o + aip * bpj;
            }
        }
    });
    Tensor::from_vec(&[m, n], out)
}

/// Multiply-accumulate count of `matmul` for the given operand dims.
pub fn matmul_macs(m: usize, k: usize, n: usize) -> u64 {
    (m as u64) * (k as u64) * (n as u64)
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.matrix_dims()?;
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for_each_row_mut(&mut out, m, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            *o = ad[i * n + j];
        }
    });
    Tensor::from_vec(&[n, m], out)
}

pub fn zip_with<T: Real>(
    op: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_dims(op, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.dims(), data)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Adds a vector over the last axis. This is the only broadcast supported.
pub fn add_bias<T: Real>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.last_dim();
    if bias.len() != c {
        return Err(Error::shape(format!(
            "add_bias: bias of {} elements against last dim {c}",
            bias.len()
        )));
    }
    let bd = bias.data();
    let mut out = x.clone();
    for_each_row_mut(out.data_mut(), c, |_, row| {
        for (o, &b) in row.iter_mut().zip(bd) {
            *o = *o + b;
        }
    });
    Ok(out)
}

/// Max-subtracted softmax along the last axis.
pub fn softmax_lastdim<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.all_finite() {
        return Err(Error::Numeric(
            "softmax input contains non-finite values".into(),
        ));
    }
    let c = x.last_dim();
    let mut out = x.clone();
    for_each_row_mut(out.data_mut(), c, |_, row| {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    });
    Ok(out)
}

/// Per-row statistics kept by [`layernorm_with_stats`] for the backward pass.
#[derive(Debug, Clone)]
pub struct RowStats<T> {
    pub mean: Vec<T>,
    /// `1 / sqrt(var + eps)`
    pub rstd: Vec<T>,
}

pub fn layernorm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layernorm_with_stats(x, gain, bias, eps).map(|(y, _)| y)
}

pub fn layernorm_with_stats<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, RowStats<T>)> {
    let c = x.last_dim();
    if gain.len() != c || bias.len() != c {
        return Err(Error::shape(format!(
            "layernorm: affine params of {}/{} elements against last dim {c}",
            gain.len(),
            bias.len()
        )));
    }
    if eps <= T::zero() {
        return Err(Error::param("layernorm eps must be positive"));
    }
    let n = T::lit(c as f64);
    let rows = x.rows();
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mu = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
        mean.push(mu);
        rstd.push(T::one() / (var + eps).sqrt());
    }
    let (g, b) = (gain.data(), bias.data());
    let mut out = x.clone();
    for_each_row_mut(out.data_mut(), c, |r, row| {
        for ((v, &gj), &bj) in row.iter_mut().zip(g).zip(b) {
            *v = (*v - mean[r]) * rstd[r] * gj + bj;
        }
    });
    Ok((out, RowStats { mean, rstd }))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let (k, c, half) = (T::lit(GELU_K), T::lit(GELU_C), T::lit(0.5));
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let (k, c, half) = (T::lit(GELU_K), T::lit(GELU_C), T::lit(0.5));
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let du = k * (T::one() + T::lit(3.0) * c * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}
