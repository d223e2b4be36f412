//! Reverse-mode differentiation over a linear (Wengert) tape.
//!
//! Every op appends a node whose inputs are earlier nodes, so node order is
//! already a topological order and `backward` is a single reverse sweep.

use crate::error::{Error, Result};

use super::kernels::{self, RowStats};
use super::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rules that can be deliberately broken, for negative controls in
/// gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    /// GELU backward uses the ReLU step instead of the true derivative.
    Gelu,
    /// Softmax backward drops the row-sum correction term.
    Softmax,
    /// LayerNorm backward treats the row mean and variance as constants.
    LayerNorm,
}

impl BackwardFault {
    pub const ALL: [BackwardFault; 3] = [
        BackwardFault::Gelu,
        BackwardFault::Softmax,
        BackwardFault::LayerNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackwardFault::Gelu => "gelu",
            BackwardFault::Softmax => "softmax",
            BackwardFault::LayerNorm => "layernorm",
        }
    }
}

impl std::fmt::Display for BackwardFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackwardFault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::param(format!("unknown backward fault {s:?}")))
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: RowStats<T>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        fill: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    macs: u64,
    fault: Option<BackwardFault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            macs: 0,
            fault: None,
        }
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Tape {
            fault: Some(fault),
            ..Tape::new()
        }
    }

    /// Multiply-accumulates performed by recorded matmuls so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable input (parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let (m, k) = self.value(a).matrix_dims()?;
        self.macs += kernels::matmul_macs(m, k, out.last_dim());
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(a))?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Transpose(a), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::sub(self.value(a), self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = kernels::add_bias(self.value(x), self.value(bias))?;
        let g = self.any_grad(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), g))
    }

    /// `x·W + b` for `x[n×in]`, `W[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, s), g)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu(self.value(x));
        let g = self.any_grad(&[x]);
        self.push(out, Op::Gelu(x), g)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_lastdim(self.value(x))?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::Softmax(x), g))
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (out, stats) =
            kernels::layernorm_with_stats(self.value(x), self.value(gain), self.value(bias), eps)?;
        let g = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            g,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(x).gather_rows(idx)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            g,
        ))
    }

    /// Builds an `n×c` matrix whose row `rows[i]` is row `i` of `src` and
    /// whose remaining rows are copies of the `c`-vector `fill`.
    pub fn scatter_rows(&mut self, src: Var, fill: Var, rows: &[usize], n: usize) -> Result<Var> {
        let s = self.value(src);
        let (k, c) = s.matrix_dims()?;
        let f = self.value(fill);
        if f.len() != c {
            return Err(Error::shape(format!(
                "scatter_rows: fill of {} elements against width {c}",
                f.len()
            )));
        }
        if k != rows.len() {
            return Err(Error::shape(format!(
                "scatter_rows: {k} source rows but {} targets",
                rows.len()
            )));
        }
        let mut taken = vec![false; n];
        for &r in rows {
            if r >= n || taken[r] {
                return Err(Error::Index(format!(
                    "scatter_rows: target row {r} out of range or repeated (n = {n})"
                )));
            }
            taken[r] = true;
        }
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(f.data());
        }
        for (i, &r) in rows.iter().enumerate() {
            data[r * c..(r + 1) * c].copy_from_slice(s.row(i));
        }
        let out = Tensor::from_vec(&[n, c], data)?;
        let g = self.any_grad(&[src, fill]);
        Ok(self.push(
            out,
            Op::ScatterRows {
                src,
                fill,
                rows: rows.to_vec(),
            },
            g,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.matrix_dims()?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!(
                "slice_cols: {start}..{} outside width {c}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(&[r, len], data)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, g))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols: no inputs"))?;
        let r = self.value(*first).matrix_dims()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).matrix_dims()?;
            if pr != r {
                return Err(Error::shape(format!(
                    "concat_cols: row counts {r} and {pr} differ"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(&[r, total], data)?;
        let g = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), g)
    }

    /// Reverse sweep from a scalar `loss`. Every node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be a scalar, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (target, contrib) in self.node_vjp(node, &g)? {
                if !self.nodes[target.0].needs_grad {
                    continue;
                }
                accumulate(&mut grads[target.0], contrib)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let ga = kernels::matmul(g, &kernels::transpose(val(*b))?)?;
                let gb = kernels::matmul(&kernels::transpose(val(*a))?, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, kernels::transpose(g)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, kernels::mul(g, val(*b))?),
                (*b, kernels::mul(g, val(*a))?),
            ],
            Op::AddBias(x, b) => {
                let c = g.last_dim();
                let mut gb = vec![T::zero(); c];
                for r in 0..g.rows() {
                    for (acc, &v) in gb.iter_mut().zip(g.row(r)) {
                        *acc = *acc + v;
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::from_vec(val(*b).dims(), gb)?)]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * *s))],
            Op::Gelu(x) => {
                let d = if self.fault == Some(BackwardFault::Gelu) {
                    val(*x).map(|v| if v > T::zero() { T::one() } else { T::zero() })
                } else {
                    val(*x).map(kernels::gelu_grad_scalar)
                };
                vec![(*x, kernels::mul(g, &d)?)]
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.last_dim();
                let drop_correction = self.fault == Some(BackwardFault::Softmax);
                let mut gx = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = if drop_correction {
                        T::zero()
                    } else {
                        yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>()
                    };
                    gx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                debug_assert_eq!(gx.len() % c, 0);
                vec![(*x, Tensor::from_vec(y.dims(), gx)?)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let xv = val(*x);
                let gain_v = val(*gain).data();
                let c = xv.last_dim();
                let n = T::lit(c as f64);
                let exact = self.fault != Some(BackwardFault::LayerNorm);
                let mut gx = Vec::with_capacity(xv.len());
                let mut ggain = vec![T::zero(); c];
                let mut gbias = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for r in 0..xv.rows() {
                    let (xr, gr) = (xv.row(r), g.row(r));
                    let (mu, rstd) = (stats.mean[r], stats.rstd[r]);
                    for j in 0..c {
                        xhat[j] = (xr[j] - mu) * rstd;
                        dxhat[j] = gr[j] * gain_v[j];
                        ggain[j] = ggain[j] + gr[j] * xhat[j];
                        gbias[j] = gbias[j] + gr[j];
                    }
                    let (m1, m2) = if exact {
                        (
                            dxhat.iter().copied().sum::<T>() / n,
                            dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n,
                        )
                    } else {
                        (T::zero(), T::zero())
                    };
                    gx.extend((0..c).map(|j| rstd * (dxhat[j] - m1 - xhat[j] * m2)));
                }
                vec![
                    (*x, Tensor::from_vec(xv.dims(), gx)?),
                    (*gain, Tensor::from_vec(val(*gain).dims(), ggain)?),
                    (*bias, Tensor::from_vec(val(*bias).dims(), gbias)?),
                ]
            }
            Op::GatherRows { x, idx } => {
                let xv = val(*x);
                let c = xv.last_dim();
                let mut gx = vec![T::zero(); xv.len()];
                for (i, &r) in idx.iter().enumerate() {
                    for (acc, &v) in gx[r * c..(r + 1) * c].iter_mut().zip(g.row(i)) {
                        *acc = *acc + v;
                    }
                }
                vec![(*x, Tensor::from_vec(xv.dims(), gx)?)]
            }
            Op::ScatterRows { src, fill, rows } => {
                let gsrc = g.gather_rows(rows)?;
                let c = g.last_dim();
                let mut is_src = vec![false; g.rows()];
                for &r in rows {
                    is_src[r] = true;
                }
                let mut gfill = vec![T::zero(); c];
                for (r, _) in is_src.iter().enumerate().filter(|(_, &s)| !s) {
                    for (acc, &v) in gfill.iter_mut().zip(g.row(r)) {
                        *acc = *acc + v;
                    }
                }
                vec![
                    (*src, gsrc),
                    (*fill, Tensor::from_vec(val(*fill).dims(), gfill)?),
                ]
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (r, c) = xv.matrix_dims()?;
                let len = g.last_dim();
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                vec![(*x, Tensor::from_vec(xv.dims(), gx)?)]
            }
            Op::ConcatCols(parts) => {
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).matrix_dims()?;
                    let mut gp = Vec::with_capacity(r * c);
                    for i in 0..r {
                        gp.extend_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    res.push((p, Tensor::from_vec(&[r, c], gp)?));
                }
                res
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).dims(), g.item()?))],
            Op::Mean(x) => {
                let n = T::lit(val(*x).len() as f64);
                vec![(*x, Tensor::full(val(*x).dims(), g.item()? / n))]
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, contrib: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => {
            if acc.dims() != contrib.dims() {
                return Err(Error::shape("gradient shape mismatch during accumulation"));
            }
            for (a, &c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a = *a + c;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::ndcore::Rng;

    fn rand_tensor(dims: &[usize], seed: u64) -> Tensor {
        let mut s = Rng::new(seed).stream("tape.test", 0);
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| s.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.dims());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Tensor, numeric: &Tensor) {
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / a.abs().max(1.0);
            assert!(err < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    /// Checks d(sum(w ⊙ op(x)))/dx for a random weighting w.
    fn check_unary(dims: &[usize], op: &dyn Fn(&mut Tape, Var) -> Var) {
        let x0 = rand_tensor(dims, 1);
        let eval = |x: &Tensor| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let y = op(&mut t, xv);
            let w = rand_tensor(t.value(y).dims(), 2);
            let wv = t.constant(w);
            let p = t.mul(y, wv).unwrap();
            let s = t.sum(p);
            (t, xv, s)
        };
        let (t, xv, s) = eval(&x0);
        let grads = t.backward(s).unwrap();
        let numeric = numeric_grad(&x0, &|x| {
            let (t, _, s) = eval(x);
            t.value(s).item().unwrap()
        });
        assert_grad_close(grads.get(xv).unwrap(), &numeric);
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.param(rand_tensor(&[3, 2], 5));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[3, 2]));
    }

    #[test]
    fn self_dot_gives_two_x() {
        let x0 = rand_tensor(&[4], 6);
        let mut t = Tape::new();
        let x = t.param(x0.clone());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &x0.map(|v| 2.0 * v));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(rand_tensor(&[2, 2], 1));
        let x = t.param(rand_tensor(&[2, 2], 2));
        let y = t.matmul(c, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn matmul_grads() {
        let b0 = rand_tensor(&[3, 2], 9);
        check_unary(&[4, 3], &|t, x| {
            let b = t.constant(b0.clone());
            t.matmul(x, b).unwrap()
        });
        let a0 = rand_tensor(&[2, 4], 10);
        check_unary(&[4, 3], &|t, x| {
            let a = t.constant(a0.clone());
            t.matmul(a, x).unwrap()
        });
    }

    #[test]
    fn elementwise_and_shape_op_grads() {
        check_unary(&[3, 4], &|t, x| t.gelu(x));
        check_unary(&[3, 4], &|t, x| t.softmax(x).unwrap());
        check_unary(&[3, 4], &|t, x| t.transpose(x).unwrap());
        check_unary(&[3, 4], &|t, x| t.scale(x, -1.5));
        check_unary(&[3, 4], &|t, x| t.mul(x, x).unwrap());
        check_unary(&[3, 4], &|t, x| {
            let y = t.scale(x, 2.0);
            t.sub(x, y).unwrap()
        });
        check_unary(&[4, 3], &|t, x| t.gather_rows(x, &[2, 0, 2]).unwrap());
        check_unary(&[3, 5], &|t, x| t.slice_cols(x, 1, 3).unwrap());
        check_unary(&[3, 2], &|t, x| {
            let y = t.gelu(x);
            t.concat_cols(&[x, y, x]).unwrap()
        });
        check_unary(&[2, 3], &|t, x| {
            let m = t.mean(x);
            let s = t.sum(x);
            t.mul(m, s).unwrap()
        });
    }

    #[test]
    fn layernorm_grads_all_inputs() {
        let g0 = rand_tensor(&[5], 11);
        let b0 = rand_tensor(&[5], 12);
        check_unary(&[3, 5], &|t, x| {
            let g = t.constant(g0.clone());
            let b = t.constant(b0.clone());
            t.layernorm(x, g, b, 1e-6).unwrap()
        });
        let x0 = rand_tensor(&[3, 5], 13);
        check_unary(&[5], &|t, g| {
            let x = t.constant(x0.clone());
            let b = t.constant(b0.clone());
            t.layernorm(x, g, b, 1e-6).unwrap()
        });
        check_unary(&[5], &|t, b| {
            let x = t.constant(x0.clone());
            let g = t.constant(g0.clone());
            t.layernorm(x, g, b, 1e-6).unwrap()
        });
    }

    #[test]
    fn bias_and_scatter_grads() {
        let x0 = rand_tensor(&[3, 4], 20);
        check_unary(&[4], &|t, b| {
            let x = t.constant(x0.clone());
            t.add_bias(x, b).unwrap()
        });
        let fill0 = rand_tensor(&[3], 21);
        check_unary(&[2, 3], &|t, src| {
            let f = t.constant(fill0.clone());
            t.scatter_rows(src, f, &[3, 1], 5).unwrap()
        });
        let src0 = rand_tensor(&[2, 3], 22);
        check_unary(&[3], &|t, f| {
            let s = t.constant(src0.clone());
            t.scatter_rows(s, f, &[3, 1], 5).unwrap()
        });
    }

    #[test]
    fn scatter_rejects_repeated_targets() {
        let mut t = Tape::<f64>::new();
        let s = t.param(Tensor::zeros(&[2, 3]));
        let f = t.param(Tensor::zeros(&[3]));
        assert!(t.scatter_rows(s, f, &[1, 1], 4).is_err());
        assert!(t.scatter_rows(s, f, &[1, 4], 4).is_err());
    }

    #[test]
    fn matmul_meter_counts_forward_macs() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::zeros(&[7, 5]));
        let b = t.param(Tensor::zeros(&[5, 3]));
        t.matmul(a, b).unwrap();
        assert_eq!(t.macs(), 105);
    }

    #[test]
    fn fault_breaks_gelu_rule() {
        let x0 = rand_tensor(&[8], 30);
        let run = |tape: &mut Tape| {
            let x = tape.param(x0.clone());
            let y = tape.gelu(x);
            let s = tape.sum(y);
            let g = tape.backward(s).unwrap();
            g.get(x).unwrap().clone()
        };
        let good = run(&mut Tape::new());
        let bad = run(&mut Tape::with_fault(BackwardFault::Gelu));
        assert!(good.max_abs_diff(&bad) > 1e-2);
    }
}
