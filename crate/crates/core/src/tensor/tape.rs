use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use super::kernels::{self, for_each_broadcast};
use super::ops::OpKind;
use super::{numel, DiffTensor, Shape};
use crate::error::{Error, Result};

/// One recorded operation. Inputs always precede their consumer.
struct Node {
    kind: OpKind,
    inputs: Vec<usize>,
    shape: Shape,
    value: Arc<Vec<f64>>,
    /// Argmax indices for max-pooling ops.
    aux: Vec<usize>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Single-writer gradient tape. Cloning yields another handle to the same tape.
#[derive(Clone, Default)]
pub struct GradTape {
    inner: Arc<Mutex<TapeInner>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: GradTape,
    pub(crate) id: usize,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, TapeInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn same(&self, other: &GradTape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes of tensor values the tape keeps alive for the reverse pass.
    pub fn value_bytes(&self) -> usize {
        self.lock().nodes.iter().map(|n| n.value.len() * std::mem::size_of::<f64>()).sum()
    }

    /// Registers `t` as a differentiable leaf on this tape.
    pub fn leaf(&self, t: &DiffTensor) -> Result<DiffTensor> {
        if t.is_tracked() {
            return Err(Error::contract("leaf() on a tensor that is already tracked"));
        }
        let mut inner = self.lock();
        if inner.consumed {
            return Err(Error::contract("tape already consumed by backward()"));
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: Vec::new(),
            shape: t.shape,
            value: Arc::clone(&t.data),
            aux: Vec::new(),
        });
        Ok(DiffTensor::from_parts(
            t.shape,
            Arc::clone(&t.data),
            Some(NodeRef { tape: self.clone(), id }),
        ))
    }
}

/// Attaches an op result to the tape shared by its tracked inputs, or returns
/// it untracked when no input is tracked.
pub(crate) fn record(
    kind: OpKind,
    inputs: &[&DiffTensor],
    shape: Shape,
    value: Vec<f64>,
    aux: Vec<usize>,
) -> Result<DiffTensor> {
    let value = Arc::new(value);
    let tape = match inputs.iter().find_map(|t| t.node()) {
        Some(n) => n.tape.clone(),
        None => return Ok(DiffTensor::from_parts(shape, value, None)),
    };
    for t in inputs {
        if let Some(n) = t.node() {
            if !n.tape.same(&tape) {
                return Err(Error::contract("op mixes tensors from different tapes"));
            }
        }
    }
    let mut inner = tape.lock();
    if inner.consumed {
        return Err(Error::contract("tape already consumed by backward()"));
    }
    let mut ids = Vec::with_capacity(inputs.len());
    for t in inputs {
        match t.node() {
            Some(n) => ids.push(n.id),
            None => {
                ids.push(inner.nodes.len());
                inner.nodes.push(Node {
                    kind: OpKind::Constant,
                    inputs: Vec::new(),
                    shape: t.shape,
                    value: Arc::clone(&t.data),
                    aux: Vec::new(),
                });
            }
        }
    }
    let id = inner.nodes.len();
    inner.nodes.push(Node {
        kind,
        inputs: ids,
        shape,
        value: Arc::clone(&value),
        aux,
    });
    drop(inner);
    Ok(DiffTensor::from_parts(shape, value, Some(NodeRef { tape, id })))
}

/// Gradients of a scalar loss with respect to every leaf reachable from it.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, DiffTensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &DiffTensor) -> Option<&DiffTensor> {
        leaf.node_id().and_then(|id| self.by_leaf.get(&id))
    }

    pub fn get_id(&self, id: usize) -> Option<&DiffTensor> {
        self.by_leaf.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl DiffTensor {
    /// Reverse pass from this scalar. The tape is consumed: its nodes are
    /// released and further ops on it fail.
    pub fn backward(&self) -> Result<Gradients> {
        if self.shape != [1, 1, 1, 1] {
            return Err(Error::contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape
            )));
        }
        let node = self
            .node()
            .ok_or_else(|| Error::contract("backward() on a tensor that is not on a tape"))?;
        let mut inner = node.tape.lock();
        if inner.consumed {
            return Err(Error::contract("tape already consumed by backward()"));
        }
        let nodes = std::mem::take(&mut inner.nodes);
        inner.consumed = true;
        drop(inner);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; node.id + 1];
        grads[node.id] = Some(vec![1.0]);
        let mut by_leaf = HashMap::new();
        for id in (0..=node.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let n = &nodes[id];
            match n.kind {
                OpKind::Leaf => {
                    by_leaf.insert(id, DiffTensor::new(n.shape, g)?);
                    continue;
                }
                OpKind::Constant => continue,
                _ => {}
            }
            let inputs: Vec<(&Shape, &[f64])> = n
                .inputs
                .iter()
                .map(|&i| (&nodes[i].shape, nodes[i].value.as_slice()))
                .collect();
            let needs: Vec<bool> = n
                .inputs
                .iter()
                .map(|&i| !matches!(nodes[i].kind, OpKind::Constant))
                .collect();
            let input_grads = backward_rule(n, &inputs, &needs, &g);
            for ((&i, gi), need) in n.inputs.iter().zip(input_grads).zip(needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn unary<F: Fn(f64, f64, f64) -> f64>(x: &[f64], y: &[f64], g: &[f64], f: F) -> Vec<f64> {
    x.iter().zip(y).zip(g).map(|((&x, &y), &g)| f(x, y, g)).collect()
}

/// Vector-Jacobian products of one node with respect to each input.
fn backward_rule(
    node: &Node,
    inputs: &[(&Shape, &[f64])],
    needs: &[bool],
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let out = &node.shape;
    let y = node.value.as_slice();
    match &node.kind {
        OpKind::Leaf | OpKind::Constant => Vec::new(),
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let (sa, a) = inputs[0];
            let (sb, b) = inputs[1];
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            match node.kind {
                OpKind::Add => for_each_broadcast(sa, sb, out, |o, ia, ib| {
                    ga[ia] += g[o];
                    gb[ib] += g[o];
                }),
                OpKind::Sub => for_each_broadcast(sa, sb, out, |o, ia, ib| {
                    ga[ia] += g[o];
                    gb[ib] -= g[o];
                }),
                OpKind::Mul => for_each_broadcast(sa, sb, out, |o, ia, ib| {
                    ga[ia] += g[o] * b[ib];
                    gb[ib] += g[o] * a[ia];
                }),
                _ => for_each_broadcast(sa, sb, out, |o, ia, ib| {
                    ga[ia] += g[o] / b[ib];
                    gb[ib] -= g[o] * a[ia] / (b[ib] * b[ib]);
                }),
            }
            vec![Some(ga), Some(gb)]
        }
        OpKind::Sqrt => vec![Some(unary(inputs[0].1, y, g, |_, y, g| 0.5 * g / y))],
        OpKind::Square => vec![Some(unary(inputs[0].1, y, g, |x, _, g| 2.0 * x * g))],
        OpKind::Abs => vec![Some(unary(inputs[0].1, y, g, |x, _, g| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }))],
        OpKind::ClampMin(lo) => {
            let lo = *lo;
            vec![Some(unary(inputs[0].1, y, g, |x, _, g| if x > lo { g } else { 0.0 }))]
        }
        OpKind::Relu => vec![Some(unary(inputs[0].1, y, g, |x, _, g| if x > 0.0 { g } else { 0.0 }))],
        OpKind::Gelu => vec![Some(unary(inputs[0].1, y, g, |x, _, g| g * kernels::gelu_grad(x)))],
        OpKind::Sigmoid => vec![Some(unary(inputs[0].1, y, g, |_, y, g| g * y * (1.0 - y)))],
        OpKind::Sum => vec![Some(vec![g[0]; inputs[0].1.len()])],
        OpKind::Mean => {
            let n = inputs[0].1.len();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        OpKind::WindowMean { size, stride } => {
            let (s, x) = inputs[0];
            let (h, w) = (s[2], s[3]);
            let ohw = out[2] * out[3];
            let mut gx = vec![0.0; x.len()];
            for p in 0..s[0] * s[1] {
                kernels::window_mean_plane_backward(
                    &g[p * ohw..(p + 1) * ohw],
                    h,
                    w,
                    *size,
                    *stride,
                    &mut gx[p * h * w..(p + 1) * h * w],
                );
            }
            vec![Some(gx)]
        }
        OpKind::Conv2d { padding } => {
            let (xs, x) = inputs[0];
            let (ws, wt) = inputs[1];
            let (gx, gw, gb) = kernels::conv2d_backward(x, xs, wt, ws, *padding, g, needs[0]);
            let mut res = vec![gx, Some(gw)];
            if inputs.len() == 3 {
                res.push(Some(gb));
            }
            res
        }
        OpKind::MatMul => {
            let (sa, a) = inputs[0];
            let (sb, b) = inputs[1];
            let (m, k, n) = (sa[2], sa[3], sb[3]);
            let batches = sa[0] * sa[1];
            let mut ga = vec![0.0; a.len()];
            let mut gb = vec![0.0; b.len()];
            for p in 0..batches {
                let gp = &g[p * m * n..(p + 1) * m * n];
                let ap = &a[p * m * k..(p + 1) * m * k];
                let bp = &b[p * k * n..(p + 1) * k * n];
                // ga = g · bᵀ ; gb = aᵀ · g
                kernels::gemm(m, n, k, gp, n as isize, 1, bp, 1, n as isize, 0.0, &mut ga[p * m * k..(p + 1) * m * k]);
                kernels::gemm(k, m, n, ap, 1, k as isize, gp, n as isize, 1, 0.0, &mut gb[p * k * n..(p + 1) * k * n]);
            }
            vec![Some(ga), Some(gb)]
        }
        OpKind::GlobalMaxPool | OpKind::ChannelMax => {
            let mut gx = vec![0.0; inputs[0].1.len()];
            for (o, &src) in node.aux.iter().enumerate() {
                gx[src] += g[o];
            }
            vec![Some(gx)]
        }
        OpKind::GlobalAvgPool => {
            let s = inputs[0].0;
            let hw = s[2] * s[3];
            let mut gx = vec![0.0; inputs[0].1.len()];
            for (p, &gv) in g.iter().enumerate() {
                let v = gv / hw as f64;
                gx[p * hw..(p + 1) * hw].fill(v);
            }
            vec![Some(gx)]
        }
        OpKind::ChannelAvg => {
            let s = inputs[0].0;
            let (c, hw) = (s[1], s[2] * s[3]);
            let mut gx = vec![0.0; inputs[0].1.len()];
            for n in 0..s[0] {
                let gn = &g[n * hw..(n + 1) * hw];
                for ci in 0..c {
                    let dst = &mut gx[(n * c + ci) * hw..(n * c + ci + 1) * hw];
                    for (d, &gv) in dst.iter_mut().zip(gn) {
                        *d = gv / c as f64;
                    }
                }
            }
            vec![Some(gx)]
        }
        OpKind::ConcatChannels => {
            let hw = out[2] * out[3];
            let mut res: Vec<Option<Vec<f64>>> =
                inputs.iter().map(|(_, x)| Some(vec![0.0; x.len()])).collect();
            for n in 0..out[0] {
                let mut c0 = 0;
                for (k, (s, _)) in inputs.iter().enumerate() {
                    let chunk = s[1] * hw;
                    let src = &g[(n * out[1] + c0) * hw..(n * out[1] + c0) * hw + chunk];
                    res[k].as_mut().unwrap()[n * chunk..(n + 1) * chunk].copy_from_slice(src);
                    c0 += s[1];
                }
            }
            res
        }
        OpKind::SpatialShift { dx, dy } => {
            let (s, x) = inputs[0];
            let hw = s[2] * s[3];
            let mut gx = vec![0.0; x.len()];
            for p in 0..s[0] * s[1] {
                kernels::shift_plane_backward(
                    &g[p * hw..(p + 1) * hw],
                    s[2],
                    s[3],
                    *dx,
                    *dy,
                    &mut gx[p * hw..(p + 1) * hw],
                );
            }
            vec![Some(gx)]
        }
        OpKind::Crop { offset } => {
            let s = inputs[0].0;
            let mut gx = vec![0.0; numel(s)];
            let mut o = 0;
            for n in 0..out[0] {
                for c in 0..out[1] {
                    for h in 0..out[2] {
                        let base = (((n + offset[0]) * s[1] + c + offset[1]) * s[2] + h + offset[2]) * s[3]
                            + offset[3];
                        gx[base..base + out[3]].copy_from_slice(&g[o..o + out[3]]);
                        o += out[3];
                    }
                }
            }
            vec![Some(gx)]
        }
        OpKind::Decimate { factor, offset } => {
            let s = inputs[0].0;
            let mut gx = vec![0.0; numel(s)];
            let mut o = 0;
            for p in 0..out[0] * out[1] {
                for i in 0..out[2] {
                    let row = offset + i * factor;
                    for j in 0..out[3] {
                        gx[(p * s[2] + row) * s[3] + offset + j * factor] = g[o];
                        o += 1;
                    }
                }
            }
            vec![Some(gx)]
        }
        OpKind::SeparableFilter { kernels: ks } => {
            let (s, x) = inputs[0];
            let hw = s[2] * s[3];
            let mut gx = vec![0.0; x.len()];
            for n in 0..s[0] {
                for c in 0..s[1] {
                    let p = n * s[1] + c;
                    let k = &ks[c % ks.len()];
                    kernels::separable_filter_plane_backward(
                        &g[p * hw..(p + 1) * hw],
                        s[2],
                        s[3],
                        k,
                        &mut gx[p * hw..(p + 1) * hw],
                    );
                }
            }
            vec![Some(gx)]
        }
    }
}

