//! Forward definitions and backward rules of every recorded op.

use super::tape::{Op, Tape, Var};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// (outer, extent, inner) split of `shape` around `axis`.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_extent(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<T: Real> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a), self.value(b));
        let (m, k) = sa
            .dims2()
            .map_err(|_| Error::dim("matmul", format!("{:?} x {:?}", sa.shape(), sb.shape())))?;
        let (k2, n) = sb
            .dims2()
            .map_err(|_| Error::dim("matmul", format!("{:?} x {:?}", sa.shape(), sb.shape())))?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", sa.shape(), sb.shape()),
            ));
        }
        let mut out = Tensor::zeros([m, n]);
        T::gemm(m, k, n, sa.data(), false, sb.data(), false, T::zero(), out.data_mut());
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, n) = vx.dims2()?;
        if vb.numel() != n || vb.rank() > 2 || (vb.rank() == 2 && vb.shape()[0] != 1) {
            return Err(Error::dim(
                "add_row",
                format!("bias {:?} does not fit rows of {:?}", vb.shape(), vx.shape()),
            ));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (out, op) = match kind {
            Unary::Relu => (vx.map(|v| if v < T::zero() { T::zero() } else { v }), Op::Relu(x)),
            Unary::Sigmoid => (vx.map(sigmoid), Op::Sigmoid(x)),
            Unary::Exp => (vx.map(T::exp), Op::Exp(x)),
            Unary::Softplus => (vx.map(softplus), Op::Softplus(x)),
            Unary::Log => {
                if let Some(bad) = vx.data().iter().position(|&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!(
                            "non-positive input {} at flat index {bad}",
                            vx.data()[bad]
                        ),
                    });
                }
                (vx.map(T::ln), Op::Log(x))
            }
        };
        Ok(self.push(out, op))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x).expect("relu is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x).expect("exp is total")
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x).expect("softplus is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let out = self.value(x).map(|v| if v < lo { lo } else if v > hi { hi } else { v });
        self.push(out, Op::Clamp(x, lo, hi))
    }

    /// Softmax over the last axis, shifted by the row maximum.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = last_extent(out.shape());
        for row in out.data_mut().chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Log of the softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = last_extent(out.shape());
        for row in out.data_mut().chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
            let log_norm = max + total.ln();
            for v in row.iter_mut() {
                *v = *v - log_norm;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Sum or mean over one axis (removing it) or over everything.
    pub fn reduce(&mut self, kind: Reduction, x: Var, axis: Option<usize>) -> Result<Var> {
        let vx = self.value(x);
        let out = match axis {
            None => {
                let total = vx.data().iter().fold(T::zero(), |acc, &v| acc + v);
                match kind {
                    Reduction::Sum => Tensor::scalar(total),
                    Reduction::Mean => Tensor::scalar(total / T::lit(vx.numel() as f64)),
                }
            }
            Some(axis) => {
                if axis >= vx.rank() {
                    return Err(Error::dim(
                        "reduce",
                        format!("axis {axis} out of range for shape {:?}", vx.shape()),
                    ));
                }
                let (outer, extent, inner) = axis_geometry(vx.shape(), axis);
                let mut data = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        let src = &vx.data()[(o * extent + e) * inner..][..inner];
                        for (d, &s) in data[o * inner..][..inner].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                if kind == Reduction::Mean {
                    let n = T::lit(extent as f64);
                    data.iter_mut().for_each(|v| *v = *v / n);
                }
                let mut shape = vx.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, data)?
            }
        };
        let op = match kind {
            Reduction::Sum => Op::Sum(x, axis),
            Reduction::Mean => Op::Mean(x, axis),
        };
        Ok(self.push(out, op))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(Reduction::Sum, x, None).expect("full reduction is total")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(Reduction::Mean, x, None).expect("full reduction is total")
    }

    /// `[m×p] ⊕ [m×q] → [m×(p+q)]`, left operand first.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let ((m, p), (m2, q)) = (va.dims2()?, vb.dims2()?);
        if m != m2 {
            return Err(Error::dim(
                "concat_cols",
                format!("row counts differ: {:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let out = Tensor::new([m, p + q], data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Picks `x[row, col]` for each pair, giving a vector.
    pub fn gather(&mut self, x: Var, picks: Vec<(usize, usize)>) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.dims2()?;
        if picks.is_empty() {
            return Err(Error::dim("gather", "no indices"));
        }
        if let Some(&(r, c)) = picks.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(Error::dim(
                "gather",
                format!("index ({r}, {c}) outside {:?}", vx.shape()),
            ));
        }
        let data = picks.iter().map(|&(r, c)| vx.data()[r * n + c]).collect();
        let out = Tensor::new([picks.len()], data)?;
        Ok(self.push(out, Op::Gather(x, picks)))
    }

    /// Applies the local backward rule of node `idx` given its upstream gradient.
    pub(super) fn propagate(
        &self,
        idx: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k) = va.dims2().expect("checked in forward");
                let n = vb.shape()[1];
                if let Some(ga) = self.slot(grads, a) {
                    // dA = G·Bᵀ
                    T::gemm(m, n, k, gd, false, vb.data(), true, T::one(), ga.data_mut());
                }
                if let Some(gb) = self.slot(grads, b) {
                    // dB = Aᵀ·G
                    T::gemm(k, m, n, va.data(), true, gd, false, T::one(), gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, gd.iter().copied());
                self.accumulate(grads, b, gd.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, gd.iter().copied());
                self.accumulate(grads, b, gd.iter().map(|&v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, gd.iter().zip(vb).map(|(&g, &v)| g * v));
                self.accumulate(grads, b, gd.iter().zip(va).map(|(&g, &v)| g * v));
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, x, gd.iter().copied());
                if let Some(gb) = self.slot(grads, bias) {
                    let n = gb.numel();
                    for row in gd.chunks_exact(n) {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, x, gd.iter().map(|&v| v * c)),
            Op::AddScalar(x) => self.accumulate(grads, x, gd.iter().copied()),
            Op::Relu(x) => {
                let vx = self.value(x).data();
                self.accumulate(
                    grads,
                    x,
                    gd.iter()
                        .zip(vx)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }),
                );
            }
            Op::Sigmoid(x) => self.accumulate(
                grads,
                x,
                gd.iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)),
            ),
            Op::Exp(x) => {
                self.accumulate(grads, x, gd.iter().zip(y.data()).map(|(&g, &e)| g * e))
            }
            Op::Log(x) => {
                let vx = self.value(x).data();
                self.accumulate(grads, x, gd.iter().zip(vx).map(|(&g, &v)| g / v));
            }
            Op::Softplus(x) => {
                let vx = self.value(x).data();
                self.accumulate(grads, x, gd.iter().zip(vx).map(|(&g, &v)| g * sigmoid(v)));
            }
            Op::Clamp(x, lo, hi) => {
                let vx = self.value(x).data();
                self.accumulate(
                    grads,
                    x,
                    gd.iter().zip(vx).map(|(&g, &v)| {
                        if v >= lo && v <= hi {
                            g
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Softmax(x) => {
                let c = last_extent(y.shape());
                let mut dx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks_exact(c).zip(gd.chunks_exact(c)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&p, &g)| acc + p * g);
                    dx.extend(yr.iter().zip(gr).map(|(&p, &g)| p * (g - dot)));
                }
                self.accumulate(grads, x, dx.into_iter());
            }
            Op::LogSoftmax(x) => {
                let c = last_extent(y.shape());
                let mut dx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks_exact(c).zip(gd.chunks_exact(c)) {
                    let total = gr.iter().fold(T::zero(), |acc, &g| acc + g);
                    dx.extend(yr.iter().zip(gr).map(|(&lp, &g)| g - lp.exp() * total));
                }
                self.accumulate(grads, x, dx.into_iter());
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let shape = self.value(x).shape().to_vec();
                let mean = matches!(node.op, Op::Mean(..));
                let numel: usize = shape.iter().product();
                match axis {
                    None => {
                        let mut v = gd[0];
                        if mean {
                            v = v / T::lit(numel as f64);
                        }
                        self.accumulate(grads, x, std::iter::repeat_n(v, numel));
                    }
                    Some(axis) => {
                        let (outer, extent, inner) = axis_geometry(&shape, axis);
                        let div = if mean { T::lit(extent as f64) } else { T::one() };
                        let mut dx = Vec::with_capacity(numel);
                        for o in 0..outer {
                            for _ in 0..extent {
                                dx.extend(gd[o * inner..][..inner].iter().map(|&v| v / div));
                            }
                        }
                        self.accumulate(grads, x, dx.into_iter());
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(a).shape()[1];
                let w = y.shape()[1];
                self.accumulate(grads, a, gd.chunks_exact(w).flat_map(|r| r[..p].iter().copied()));
                self.accumulate(grads, b, gd.chunks_exact(w).flat_map(|r| r[p..].iter().copied()));
            }
            Op::Gather(x, ref picks) => {
                if let Some(gx) = self.slot(grads, x) {
                    let n = gx.shape()[1];
                    for (&(r, c), &g) in picks.iter().zip(gd) {
                        let cell = &mut gx.data_mut()[r * n + c];
                        *cell = *cell + g;
                    }
                }
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        contribution: impl Iterator<Item = T>,
    ) {
        if let Some(slot) = self.slot(grads, v) {
            for (acc, c) in slot.data_mut().iter_mut().zip(contribution) {
                *acc = *acc + c;
            }
        }
    }
}
