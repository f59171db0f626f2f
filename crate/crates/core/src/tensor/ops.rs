use std::sync::Arc;

use super::kernels::{self, for_each_broadcast, Padding};
use super::tape::record;
use super::{numel, DiffTensor, Shape};
use crate::error::{Error, Result};

/// The closed set of differentiable operations, with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Square,
    Abs,
    ClampMin(f64),
    Sum,
    Mean,
    /// Mean over `size × size` windows at `stride`, valid placement only.
    WindowMean { size: usize, stride: usize },
    /// Stride-1 "same" convolution; inputs are `x`, `weight` and optionally `bias`.
    Conv2d { padding: Padding },
    MatMul,
    Relu,
    Gelu,
    Sigmoid,
    GlobalMaxPool,
    GlobalAvgPool,
    ChannelMax,
    ChannelAvg,
    ConcatChannels,
    /// `out(i, j) = x(i + dy, j + dx)`, bilinear, clamped at borders.
    SpatialShift { dx: f64, dy: f64 },
    /// Sub-box starting at `offset`; the output shape is given separately.
    Crop { offset: [usize; 4] },
    /// Keeps rows and columns `offset + k * factor`.
    Decimate { factor: usize, offset: usize },
    /// Per-channel separable filter with replicate padding; channel `c` uses
    /// `kernels[c % kernels.len()]` along both axes.
    SeparableFilter { kernels: Arc<Vec<Vec<f64>>> },
}

fn broadcast_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::contract(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

impl DiffTensor {
    fn binary(&self, other: &DiffTensor, kind: OpKind, f: impl Fn(f64, f64) -> f64) -> Result<DiffTensor> {
        let out = broadcast_shape(&self.shape, &other.shape)?;
        let (a, b) = (self.values(), other.values());
        let value = if self.shape == other.shape {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut v = vec![0.0; numel(&out)];
            for_each_broadcast(&self.shape, &other.shape, &out, |o, ia, ib| v[o] = f(a[ia], b[ib]));
            v
        };
        record(kind, &[self, other], out, value, Vec::new())
    }

    fn unary(&self, kind: OpKind, f: impl Fn(f64) -> f64) -> Result<DiffTensor> {
        let value = self.values().iter().map(|&x| f(x)).collect();
        record(kind, &[self], self.shape, value, Vec::new())
    }

    /// Generic entry point: applies `kind` to `inputs`. Ops that need an
    /// explicit output shape (`Crop`) take it through their typed method.
    pub fn apply(kind: &OpKind, inputs: &[&DiffTensor]) -> Result<DiffTensor> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::contract(format!("{kind:?} takes {n} inputs, got {}", inputs.len())));
            }
            Ok(())
        };
        match kind {
            OpKind::Leaf | OpKind::Constant => Err(Error::contract("leaf/constant are not ops")),
            OpKind::Add => arity(2).and_then(|_| inputs[0].add(inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| inputs[0].sub(inputs[1])),
            OpKind::Mul => arity(2).and_then(|_| inputs[0].mul(inputs[1])),
            OpKind::Div => arity(2).and_then(|_| inputs[0].div(inputs[1])),
            OpKind::MatMul => arity(2).and_then(|_| inputs[0].matmul(inputs[1])),
            OpKind::Sqrt => arity(1).and_then(|_| inputs[0].sqrt()),
            OpKind::Square => arity(1).and_then(|_| inputs[0].square()),
            OpKind::Abs => arity(1).and_then(|_| inputs[0].abs()),
            OpKind::ClampMin(lo) => arity(1).and_then(|_| inputs[0].clamp_min(*lo)),
            OpKind::Sum => arity(1).and_then(|_| inputs[0].sum()),
            OpKind::Mean => arity(1).and_then(|_| inputs[0].mean()),
            OpKind::WindowMean { size, stride } => arity(1).and_then(|_| inputs[0].window_mean(*size, *stride)),
            OpKind::Conv2d { padding } => match inputs.len() {
                2 => inputs[0].conv2d(inputs[1], None, *padding),
                3 => inputs[0].conv2d(inputs[1], Some(inputs[2]), *padding),
                n => Err(Error::contract(format!("conv2d takes 2 or 3 inputs, got {n}"))),
            },
            OpKind::Relu => arity(1).and_then(|_| inputs[0].relu()),
            OpKind::Gelu => arity(1).and_then(|_| inputs[0].gelu()),
            OpKind::Sigmoid => arity(1).and_then(|_| inputs[0].sigmoid()),
            OpKind::GlobalMaxPool => arity(1).and_then(|_| inputs[0].global_max_pool()),
            OpKind::GlobalAvgPool => arity(1).and_then(|_| inputs[0].global_avg_pool()),
            OpKind::ChannelMax => arity(1).and_then(|_| inputs[0].channel_max()),
            OpKind::ChannelAvg => arity(1).and_then(|_| inputs[0].channel_avg()),
            OpKind::ConcatChannels => DiffTensor::concat_channels(inputs),
            OpKind::SpatialShift { dx, dy } => arity(1).and_then(|_| inputs[0].spatial_shift(*dx, *dy)),
            OpKind::Crop { .. } => Err(Error::contract("crop needs an output shape; use DiffTensor::crop")),
            OpKind::Decimate { factor, offset } => arity(1).and_then(|_| inputs[0].decimate(*factor, *offset)),
            OpKind::SeparableFilter { kernels } => {
                arity(1).and_then(|_| inputs[0].separable_filter(Arc::clone(kernels)))
            }
        }
    }

    pub fn add(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, OpKind::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, OpKind::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        self.binary(other, OpKind::Mul, |a, b| a * b)
    }

    /// Fails with a numeric-domain error if the divisor holds an exact zero.
    pub fn div(&self, other: &DiffTensor) -> Result<DiffTensor> {
        if let Some(i) = other.values().iter().position(|&v| v == 0.0) {
            return Err(Error::NumericDomain(format!("division by exact zero at element {i}")));
        }
        self.binary(other, OpKind::Div, |a, b| a / b)
    }

    pub fn add_scalar(&self, c: f64) -> Result<DiffTensor> {
        self.add(&DiffTensor::scalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Result<DiffTensor> {
        self.mul(&DiffTensor::scalar(c))
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f64) -> Result<DiffTensor> {
        DiffTensor::scalar(c).sub(self)
    }

    pub fn sqrt(&self) -> Result<DiffTensor> {
        if let Some(i) = self.values().iter().position(|&v| v < 0.0) {
            return Err(Error::NumericDomain(format!("sqrt of negative value at element {i}")));
        }
        self.unary(OpKind::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Result<DiffTensor> {
        self.unary(OpKind::Square, |x| x * x)
    }

    pub fn abs(&self) -> Result<DiffTensor> {
        self.unary(OpKind::Abs, f64::abs)
    }

    pub fn clamp_min(&self, lo: f64) -> Result<DiffTensor> {
        self.unary(OpKind::ClampMin(lo), |x| x.max(lo))
    }

    pub fn relu(&self) -> Result<DiffTensor> {
        self.unary(OpKind::Relu, |x| x.max(0.0))
    }

    pub fn gelu(&self) -> Result<DiffTensor> {
        self.unary(OpKind::Gelu, kernels::gelu)
    }

    pub fn sigmoid(&self) -> Result<DiffTensor> {
        self.unary(OpKind::Sigmoid, kernels::sigmoid)
    }

    pub fn sum(&self) -> Result<DiffTensor> {
        let s = self.values().iter().sum();
        record(OpKind::Sum, &[self], [1, 1, 1, 1], vec![s], Vec::new())
    }

    pub fn mean(&self) -> Result<DiffTensor> {
        let s: f64 = self.values().iter().sum();
        record(OpKind::Mean, &[self], [1, 1, 1, 1], vec![s / self.len() as f64], Vec::new())
    }

    pub fn window_mean(&self, size: usize, stride: usize) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        if size == 0 || stride == 0 || size > h || size > w {
            return Err(Error::contract(format!(
                "window {size} (stride {stride}) does not fit {h}x{w}"
            )));
        }
        let oh = kernels::window_out_len(h, size, stride);
        let ow = kernels::window_out_len(w, size, stride);
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            kernels::window_mean_plane(
                &self.values()[p * h * w..(p + 1) * h * w],
                h,
                w,
                size,
                stride,
                &mut out[p * oh * ow..(p + 1) * oh * ow],
            );
        }
        record(OpKind::WindowMean { size, stride }, &[self], [n, c, oh, ow], out, Vec::new())
    }

    /// `weight` is `(cout, cin, kh, kw)` with odd kernel sizes; `bias` has
    /// `cout` elements.
    pub fn conv2d(&self, weight: &DiffTensor, bias: Option<&DiffTensor>, padding: Padding) -> Result<DiffTensor> {
        let [n, cin, h, w] = self.shape;
        let [cout, wcin, kh, kw] = weight.shape;
        if wcin != cin {
            return Err(Error::contract(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::contract("conv2d: kernel sizes must be odd"));
        }
        if let Some(b) = bias {
            if b.len() != cout {
                return Err(Error::contract(format!("conv2d: bias has {} elements, need {cout}", b.len())));
            }
        }
        let out = kernels::conv2d_forward(
            self.values(),
            &self.shape,
            weight.values(),
            &weight.shape,
            bias.map(|b| b.values()),
            padding,
        );
        let kind = OpKind::Conv2d { padding };
        match bias {
            Some(b) => record(kind, &[self, weight, b], [n, cout, h, w], out, Vec::new()),
            None => record(kind, &[self, weight], [n, cout, h, w], out, Vec::new()),
        }
    }

    /// Batched matrix product over the last two dimensions.
    pub fn matmul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        let [n, c, m, k] = self.shape;
        let [n2, c2, k2, cols] = other.shape;
        if n != n2 || c != c2 || k != k2 {
            return Err(Error::contract(format!(
                "matmul: {:?} x {:?} do not conform",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; n * c * m * cols];
        for p in 0..n * c {
            kernels::gemm(
                m,
                k,
                cols,
                &self.values()[p * m * k..(p + 1) * m * k],
                k as isize,
                1,
                &other.values()[p * k * cols..(p + 1) * k * cols],
                cols as isize,
                1,
                0.0,
                &mut out[p * m * cols..(p + 1) * m * cols],
            );
        }
        record(OpKind::MatMul, &[self, other], [n, c, m, cols], out, Vec::new())
    }

    pub fn global_max_pool(&self) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let plane = &self.values()[p * hw..(p + 1) * hw];
            let (mut best, mut idx) = (plane[0], 0);
            for (i, &v) in plane.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    idx = i;
                }
            }
            out.push(best);
            arg.push(p * hw + idx);
        }
        record(OpKind::GlobalMaxPool, &[self], [n, c, 1, 1], out, arg)
    }

    pub fn global_avg_pool(&self) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let out = (0..n * c)
            .map(|p| self.values()[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        record(OpKind::GlobalAvgPool, &[self], [n, c, 1, 1], out, Vec::new())
    }

    pub fn channel_max(&self) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let x = self.values();
        let mut out = vec![0.0; n * hw];
        let mut arg = vec![0; n * hw];
        for b in 0..n {
            let base = b * c * hw;
            for i in 0..hw {
                out[b * hw + i] = x[base + i];
                arg[b * hw + i] = base + i;
            }
            for ci in 1..c {
                for i in 0..hw {
                    let v = x[base + ci * hw + i];
                    if v > out[b * hw + i] {
                        out[b * hw + i] = v;
                        arg[b * hw + i] = base + ci * hw + i;
                    }
                }
            }
        }
        record(OpKind::ChannelMax, &[self], [n, 1, h, w], out, arg)
    }

    pub fn channel_avg(&self) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let x = self.values();
        let mut out = vec![0.0; n * hw];
        for b in 0..n {
            let dst = &mut out[b * hw..(b + 1) * hw];
            for ci in 0..c {
                let src = &x[(b * c + ci) * hw..(b * c + ci + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= c as f64);
        }
        record(OpKind::ChannelAvg, &[self], [n, 1, h, w], out, Vec::new())
    }

    pub fn concat_channels(parts: &[&DiffTensor]) -> Result<DiffTensor> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != n || p.shape[2] != h || p.shape[3] != w) {
            return Err(Error::contract("concat_channels: batch/spatial sizes differ"));
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c * hw);
        for b in 0..n {
            for p in parts {
                let chunk = p.shape[1] * hw;
                out.extend_from_slice(&p.values()[b * chunk..(b + 1) * chunk]);
            }
        }
        record(OpKind::ConcatChannels, parts, [n, c, h, w], out, Vec::new())
    }

    pub fn spatial_shift(&self, dx: f64, dy: f64) -> Result<DiffTensor> {
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::contract("spatial_shift: non-finite offset"));
        }
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut out = vec![0.0; self.len()];
        for p in 0..n * c {
            kernels::shift_plane(&self.values()[p * hw..(p + 1) * hw], h, w, dx, dy, &mut out[p * hw..(p + 1) * hw]);
        }
        record(OpKind::SpatialShift { dx, dy }, &[self], self.shape, out, Vec::new())
    }

    pub fn crop(&self, offset: [usize; 4], size: Shape) -> Result<DiffTensor> {
        for d in 0..4 {
            if size[d] == 0 || offset[d] + size[d] > self.shape[d] {
                return Err(Error::contract(format!(
                    "crop {offset:?}+{size:?} outside {:?}",
                    self.shape
                )));
            }
        }
        let s = self.shape;
        let mut out = Vec::with_capacity(numel(&size));
        for n in 0..size[0] {
            for c in 0..size[1] {
                for h in 0..size[2] {
                    let base = (((n + offset[0]) * s[1] + c + offset[1]) * s[2] + h + offset[2]) * s[3] + offset[3];
                    out.extend_from_slice(&self.values()[base..base + size[3]]);
                }
            }
        }
        record(OpKind::Crop { offset }, &[self], size, out, Vec::new())
    }

    /// Channel `c` as a `(n, 1, h, w)` tensor.
    pub fn channel(&self, c: usize) -> Result<DiffTensor> {
        let [n, _, h, w] = self.shape;
        self.crop([0, c, 0, 0], [n, 1, h, w])
    }

    pub fn decimate(&self, factor: usize, offset: usize) -> Result<DiffTensor> {
        let [n, c, h, w] = self.shape;
        if factor == 0 || offset >= h || offset >= w {
            return Err(Error::contract(format!("decimate({factor}, {offset}) on {h}x{w}")));
        }
        let oh = (h - offset).div_ceil(factor);
        let ow = (w - offset).div_ceil(factor);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for i in 0..oh {
                let row = &self.values()[(p * h + offset + i * factor) * w..(p * h + offset + i * factor + 1) * w];
                out.extend((0..ow).map(|j| row[offset + j * factor]));
            }
        }
        record(OpKind::Decimate { factor, offset }, &[self], [n, c, oh, ow], out, Vec::new())
    }

    pub fn separable_filter(&self, kernels_per_channel: Arc<Vec<Vec<f64>>>) -> Result<DiffTensor> {
        if kernels_per_channel.is_empty() || kernels_per_channel.iter().any(|k| k.len() % 2 == 0) {
            return Err(Error::contract("separable_filter: kernels must be non-empty with odd length"));
        }
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut out = vec![0.0; self.len()];
        for b in 0..n {
            for ci in 0..c {
                let p = b * c + ci;
                kernels::separable_filter_plane(
                    &self.values()[p * hw..(p + 1) * hw],
                    h,
                    w,
                    &kernels_per_channel[ci % kernels_per_channel.len()],
                    &mut out[p * hw..(p + 1) * hw],
                );
            }
        }
        record(OpKind::SeparableFilter { kernels: kernels_per_channel }, &[self], self.shape, out, Vec::new())
    }
}
