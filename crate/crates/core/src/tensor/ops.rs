use super::broadcast::zip_map;
use super::kernels::{self, ConvGeometry};
use super::tape::{sigmoid, Op, Unary};
use super::{Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::shape("matmul", a, b));
    }
    Ok((a[0], a[1], b[1]))
}

fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Log1mExp => {
                // two branches for accuracy near 0 and for large x
                if x < std::f64::consts::LN_2 {
                    (-(-x).exp_m1()).ln()
                } else {
                    (-(-x).exp()).ln_1p()
                }
            }
            Unary::NormalCdf => normal_cdf(x),
        }
    }
}

impl Var {
    fn check_tape(&self, other: &Var) -> Result<()> {
        if self.tape.same_as(&other.tape) {
            Ok(())
        } else {
            Err(Error::DetachedTensor)
        }
    }

    fn binary(
        &self,
        other: &Var,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.check_tape(other)?;
        let value = zip_map(name, &self.value, &other.value, f)?;
        Ok(self.tape.push(op(self.id, other.id), value))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn unary(&self, kind: Unary) -> Var {
        let value = self.value.map(|x| kind.apply(x));
        self.tape.push(Op::Unary(kind, self.id), value)
    }

    pub fn neg(&self) -> Var {
        self.unary(Unary::Neg)
    }

    pub fn exp(&self) -> Var {
        self.unary(Unary::Exp)
    }

    /// Natural log; negative inputs are a domain error.
    pub fn log(&self) -> Result<Var> {
        self.check_domain("log", |x| x >= 0.0)?;
        Ok(self.unary(Unary::Log))
    }

    pub fn sqrt(&self) -> Result<Var> {
        self.check_domain("sqrt", |x| x >= 0.0)?;
        Ok(self.unary(Unary::Sqrt))
    }

    pub fn log1mexp(&self) -> Result<Var> {
        self.check_domain("log1mexp", |x| x > 0.0)?;
        Ok(self.unary(Unary::Log1mExp))
    }

    fn check_domain(&self, op: &'static str, ok: impl Fn(f64) -> bool) -> Result<()> {
        match self.value.data().iter().find(|&&x| !ok(x)) {
            Some(bad) => Err(Error::Domain {
                op,
                detail: format!("got {bad}"),
            }),
            None => Ok(()),
        }
    }

    pub fn tanh(&self) -> Var {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Unary::Sigmoid)
    }

    pub fn softplus(&self) -> Var {
        self.unary(Unary::Softplus)
    }

    pub fn relu(&self) -> Var {
        self.unary(Unary::Relu)
    }

    pub fn square(&self) -> Var {
        self.unary(Unary::Square)
    }

    pub fn cos(&self) -> Var {
        self.unary(Unary::Cos)
    }

    pub fn sin(&self) -> Var {
        self.unary(Unary::Sin)
    }

    pub fn normal_cdf(&self) -> Var {
        self.unary(Unary::NormalCdf)
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Var {
        let value = self.value.map(|x| scale * x + shift);
        self.tape.push(Op::Affine { input: self.id, scale }, value)
    }

    pub fn mul_scalar(&self, s: f64) -> Var {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        self.affine(1.0, s)
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_tape(other)?;
        let value = self.value.matmul(&other.value)?;
        Ok(self.tape.push(Op::MatMul(self.id, other.id), value))
    }

    pub fn t(&self) -> Result<Var> {
        let value = self.value.t()?;
        Ok(self.tape.push(Op::Transpose(self.id), value))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value.reshape(shape)?;
        Ok(self.tape.push(Op::Reshape(self.id), value))
    }

    pub fn sum(&self) -> Var {
        let value = Tensor::scalar(self.value.sum());
        self.tape.push(Op::Sum(self.id), value)
    }

    pub fn mean(&self) -> Var {
        let n = self.value.len().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid_shape("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut d = vec![0.0; outer * inner];
        let src = self.value.data();
        for o in 0..outer {
            for a in 0..n {
                let row = &src[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (dst, &v) in d[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let v = self
            .tape
            .push(Op::SumAxis { input: self.id, axis }, Tensor::from_parts(out_shape, d));
        if keepdim {
            let mut keep = shape;
            keep[axis] = 1;
            v.reshape(&keep)
        } else {
            Ok(v)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid_shape("mean_axis", format!("axis {axis}")))?;
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / n as f64))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid_shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut d = Vec::with_capacity(outer * len * inner);
        let src = self.value.data();
        for o in 0..outer {
            let s = (o * full + start) * inner;
            d.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        Ok(self.tape.push(
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
            Tensor::from_parts(out, d),
        ))
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid_shape("concat", "no inputs"))?;
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid_shape("concat", format!("axis {axis} for {base:?}")));
        }
        for p in parts {
            first.check_tape(p)?;
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut d = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                d.extend_from_slice(&p.value.data()[o * len..(o + 1) * len]);
            }
        }
        let mut out = base;
        out[axis] = total;
        Ok(first.tape.push(
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            Tensor::from_parts(out, d),
        ))
    }

    /// 2-D cross-correlation: input `[b, h, w, c_in]`, kernel `[kh, kw, c_in, c_out]`.
    pub fn conv2d(&self, kernel: &Var, stride: usize, padding: Padding) -> Result<Var> {
        self.check_tape(kernel)?;
        let geometry = conv_geometry(self.shape(), kernel.shape(), stride, padding)?;
        let out = kernels::conv2d_forward(self.value.data(), kernel.value.data(), &geometry);
        Ok(self.tape.push(
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geometry,
            },
            Tensor::from_parts(
                vec![geometry.batch, geometry.out_h, geometry.out_w, geometry.out_channels],
                out,
            ),
        ))
    }

    /// Lower Cholesky factor; fails if the matrix is not positive definite.
    pub fn cholesky(&self) -> Result<Var> {
        let n = square_dim("cholesky", self.shape())?;
        let l = kernels::cholesky(self.value.data(), n).ok_or(Error::Cholesky { jitter: 0.0 })?;
        Ok(self
            .tape
            .push(Op::Cholesky(self.id), Tensor::from_parts(vec![n, n], l)))
    }

    /// Solves `L X = B` (`Lᵀ X = B` when `transpose`) with `self` as lower-triangular `L`.
    pub fn solve_triangular(&self, b: &Var, transpose: bool) -> Result<Var> {
        self.check_tape(b)?;
        let n = square_dim("solve_triangular", self.shape())?;
        if b.shape().len() != 2 || b.shape()[0] != n {
            return Err(Error::shape("solve_triangular", self.shape(), b.shape()));
        }
        let m = b.shape()[1];
        let x = kernels::solve_lower(self.value.data(), b.value.data(), n, m, transpose);
        Ok(self.tape.push(
            Op::TriSolve {
                l: self.id,
                b: b.id,
                transpose,
            },
            Tensor::from_parts(vec![n, m], x),
        ))
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&self) -> Result<Var> {
        let n = square_dim("diag", self.shape())?;
        let d = (0..n).map(|i| self.value.data()[i * n + i]).collect();
        Ok(self.tape.push(Op::Diag(self.id), Tensor::from_parts(vec![n], d)))
    }

    /// `log Σ exp` along `axis`, shifted by the detached maximum.
    pub fn logsumexp(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid_shape("logsumexp", format!("axis {axis}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut max = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    let v = self.value.data()[(o * n + a) * inner + i];
                    let m = &mut max[o * inner + i];
                    *m = m.max(v);
                }
            }
        }
        for m in &mut max {
            if !m.is_finite() {
                *m = 0.0;
            }
        }
        let mut keep = shape;
        keep[axis] = 1;
        let shift = self.tape.constant(Tensor::from_parts(keep, max));
        let lse = self
            .sub(&shift)?
            .exp()
            .sum_axis(axis, true)?
            .log()?
            .add(&shift)?;
        if keepdim {
            Ok(lse)
        } else {
            let mut out = self.shape().to_vec();
            out.remove(axis);
            lse.reshape(&out)
        }
    }
}

fn square_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.len() == 2 && shape[0] == shape[1] {
        Ok(shape[0])
    } else {
        Err(Error::invalid_shape(op, format!("expected a square matrix, got {shape:?}")))
    }
}

pub(crate) fn conv_geometry(
    x: &[usize],
    k: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    if x.len() != 4 || k.len() != 4 || x[3] != k[2] {
        return Err(Error::shape("conv2d", x, k));
    }
    if stride == 0 {
        return Err(Error::invalid_shape("conv2d", "stride must be positive"));
    }
    let (batch, height, width, in_channels) = (x[0], x[1], x[2], x[3]);
    let (kernel_h, kernel_w, out_channels) = (k[0], k[1], k[3]);
    if height == 0 || width == 0 || kernel_h == 0 || kernel_w == 0 {
        return Err(Error::invalid_shape("conv2d", "empty spatial extent"));
    }
    let (out_h, out_w, pad_top, pad_left) = match padding {
        Padding::Same => {
            let oh = height.div_ceil(stride);
            let ow = width.div_ceil(stride);
            let ph = ((oh - 1) * stride + kernel_h).saturating_sub(height);
            let pw = ((ow - 1) * stride + kernel_w).saturating_sub(width);
            if kernel_h > height + ph || kernel_w > width + pw {
                return Err(Error::shape("conv2d", x, k));
            }
            (oh, ow, ph / 2, pw / 2)
        }
        Padding::Valid => {
            if kernel_h > height || kernel_w > width {
                return Err(Error::invalid_shape(
                    "conv2d",
                    format!("kernel {kernel_h}x{kernel_w} larger than input {height}x{width}"),
                ));
            }
            ((height - kernel_h) / stride + 1, (width - kernel_w) / stride + 1, 0, 0)
        }
    };
    Ok(ConvGeometry {
        batch,
        height,
        width,
        in_channels,
        kernel_h,
        kernel_w,
        out_channels,
        stride,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}
