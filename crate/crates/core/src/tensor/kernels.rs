//! Raw compute kernels shared by forward ops, their backward rules, and the
//! non-differentiable raster code. All planes are row-major `height * width`.

use serde::{Deserialize, Serialize};

use super::{numel, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    Replicate,
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Per-dimension strides of `shape` when broadcast to `out`.
pub(crate) fn broadcast_strides(shape: &Shape, out: &Shape) -> [usize; 4] {
    let natural = [shape[1] * shape[2] * shape[3], shape[2] * shape[3], shape[3], 1];
    let mut strides = [0; 4];
    for d in 0..4 {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { natural[d] };
    }
    strides
}

/// Visits every output element with the flat offsets of both broadcast inputs.
pub(crate) fn for_each_broadcast(
    a: &Shape,
    b: &Shape,
    out: &Shape,
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let mut o = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let base_a = n * sa[0] + c * sa[1] + h * sa[2];
                let base_b = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out[3] {
                    f(o, base_a + w * sa[3], base_b + w * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

// ── convolution ─────────────────────────────────────────────────────────

/// Column-matrix budget (elements) per convolution chunk; bounds im2col
/// memory independently of image size.
const COL_BUDGET: usize = 1 << 20;

fn chunk_rows(k: usize, h: usize, w: usize) -> usize {
    (COL_BUDGET / (k * w).max(1)).clamp(1, h)
}

/// Unfolds output rows `[r0, r1)` of one `(cin, h, w)` image into a
/// `(cin*kh*kw, (r1-r0)*w)` column matrix for a stride-1 "same" convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
    (r0, r1): (usize, usize),
    col: &mut [f64],
) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    let n = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                let di = ki as isize - ph;
                let dj = kj as isize - pw;
                for i in r0..r1 {
                    let si = i as isize + di;
                    let out_row = &mut dst[(i - r0) * w..(i - r0 + 1) * w];
                    let src_row = if si < 0 || si >= h as isize {
                        match padding {
                            Padding::Zero => {
                                out_row.fill(0.0);
                                continue;
                            }
                            Padding::Replicate => clamp_index(si, h),
                        }
                    } else {
                        si as usize
                    };
                    let src = &plane[src_row * w..(src_row + 1) * w];
                    let lo = (-dj).clamp(0, w as isize) as usize;
                    let hi = (w as isize - dj).clamp(0, w as isize) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + dj) as usize;
                        out_row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    let edge = |j: usize| -> f64 {
                        match padding {
                            Padding::Zero => 0.0,
                            Padding::Replicate => src[clamp_index(j as isize + dj, w)],
                        }
                    };
                    for j in 0..lo.min(w) {
                        out_row[j] = edge(j);
                    }
                    for j in hi.max(lo)..w {
                        out_row[j] = edge(j);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients of output rows
/// `[r0, r1)` back onto the image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
    (r0, r1): (usize, usize),
    gx: &mut [f64],
) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    let n = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &col[row * n..(row + 1) * n];
                let di = ki as isize - ph;
                let dj = kj as isize - pw;
                for i in r0..r1 {
                    let si = i as isize + di;
                    let dst_row = if si < 0 || si >= h as isize {
                        match padding {
                            Padding::Zero => continue,
                            Padding::Replicate => clamp_index(si, h),
                        }
                    } else {
                        si as usize
                    };
                    let g = &src[(i - r0) * w..(i - r0 + 1) * w];
                    let dst = &mut plane[dst_row * w..(dst_row + 1) * w];
                    for (j, &gv) in g.iter().enumerate() {
                        let sj = j as isize + dj;
                        if sj < 0 || sj >= w as isize {
                            if padding == Padding::Replicate {
                                dst[clamp_index(sj, w)] += gv;
                            }
                        } else {
                            dst[sj as usize] += gv;
                        }
                    }
                }
            }
        }
    }
}

/// `c = op(a) * op(b) + beta * c` over row-major buffers, with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    gemm_into(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c, n as isize);
}

/// [`gemm`] writing into `c` with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * rsc as usize + n);
    // SAFETY: callers pass buffers whose extents cover the strided m×k, k×n and
    // m×n views; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    xs: &Shape,
    wt: &[f64],
    ws: &Shape,
    bias: Option<&[f64]>,
    padding: Padding,
) -> Vec<f64> {
    let [n, cin, h, w] = *xs;
    let [cout, _, kh, kw] = *ws;
    let hw = h * w;
    let k = cin * kh * kw;
    let mut out = vec![0.0; n * cout * hw];
    let pointwise = kh == 1 && kw == 1;
    let rows = chunk_rows(k, h, w);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * rows * w] };
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        let ob = &mut out[b * cout * hw..(b + 1) * cout * hw];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * hw..(co + 1) * hw].fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if pointwise {
            gemm(cout, k, hw, wt, k as isize, 1, xb, hw as isize, 1, beta, ob);
            continue;
        }
        for r0 in (0..h).step_by(rows) {
            let r1 = (r0 + rows).min(h);
            let nc = (r1 - r0) * w;
            im2col(xb, cin, h, w, kh, kw, padding, (r0, r1), &mut col);
            gemm_into(cout, k, nc, wt, (k as isize, 1), &col, (nc as isize, 1), beta, &mut ob[r0 * w..], hw as isize);
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub(crate) fn conv2d_backward(
    x: &[f64],
    xs: &Shape,
    wt: &[f64],
    ws: &Shape,
    padding: Padding,
    gout: &[f64],
    need_x: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let [n, cin, h, w] = *xs;
    let [cout, _, kh, kw] = *ws;
    let hw = h * w;
    let k = cin * kh * kw;
    let mut gw = vec![0.0; cout * k];
    let mut gb = vec![0.0; cout];
    let mut gx = if need_x { Some(vec![0.0; numel(xs)]) } else { None };
    let pointwise = kh == 1 && kw == 1;
    let rows = chunk_rows(k, h, w);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * rows * w] };
    let mut gcol = if need_x && !pointwise { vec![0.0; k * rows * w] } else { Vec::new() };
    for b in 0..n {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        let gb_out = &gout[b * cout * hw..(b + 1) * cout * hw];
        for co in 0..cout {
            gb[co] += gb_out[co * hw..(co + 1) * hw].iter().sum::<f64>();
        }
        if pointwise {
            // gw += gout · xᵀ ; gx += wᵀ · gout
            gemm(cout, hw, k, gb_out, hw as isize, 1, xb, 1, hw as isize, 1.0, &mut gw);
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[b * cin * hw..(b + 1) * cin * hw];
                gemm(k, cout, hw, wt, 1, k as isize, gb_out, hw as isize, 1, 1.0, gxb);
            }
            continue;
        }
        for r0 in (0..h).step_by(rows) {
            let r1 = (r0 + rows).min(h);
            let nc = (r1 - r0) * w;
            let g = &gb_out[r0 * w..];
            im2col(xb, cin, h, w, kh, kw, padding, (r0, r1), &mut col);
            // gw += gout[:, chunk] · colᵀ
            gemm_into(cout, nc, k, g, (hw as isize, 1), &col, (1, nc as isize), 1.0, &mut gw, k as isize);
            if let Some(gx) = gx.as_mut() {
                gemm_into(k, cout, nc, wt, (1, k as isize), g, (hw as isize, 1), 0.0, &mut gcol, nc as isize);
                col2im(&gcol, cin, h, w, kh, kw, padding, (r0, r1), &mut gx[b * cin * hw..(b + 1) * cin * hw]);
            }
        }
    }
    (gx, gw, gb)
}

// ── windowed statistics ─────────────────────────────────────────────────

pub(crate) fn window_out_len(len: usize, size: usize, stride: usize) -> usize {
    (len - size) / stride + 1
}

/// Mean over `size × size` windows anchored at multiples of `stride`
/// ("valid" placement).
pub(crate) fn window_mean_plane(
    x: &[f64],
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    out: &mut [f64],
) {
    let oh = window_out_len(h, size, stride);
    let ow = window_out_len(w, size, stride);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        let src = &x[i * w..(i + 1) * w];
        for jo in 0..ow {
            let j0 = jo * stride;
            rows[i * ow + jo] = src[j0..j0 + size].iter().sum();
        }
    }
    let norm = 1.0 / (size * size) as f64;
    for io in 0..oh {
        let i0 = io * stride;
        for jo in 0..ow {
            let mut s = 0.0;
            for t in 0..size {
                s += rows[(i0 + t) * ow + jo];
            }
            out[io * ow + jo] = s * norm;
        }
    }
}

pub(crate) fn window_mean_plane_backward(
    g: &[f64],
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    gx: &mut [f64],
) {
    let oh = window_out_len(h, size, stride);
    let ow = window_out_len(w, size, stride);
    let norm = 1.0 / (size * size) as f64;
    let mut rows = vec![0.0; h * ow];
    for io in 0..oh {
        let i0 = io * stride;
        for jo in 0..ow {
            let gv = g[io * ow + jo] * norm;
            for t in 0..size {
                rows[(i0 + t) * ow + jo] += gv;
            }
        }
    }
    for i in 0..h {
        let dst = &mut gx[i * w..(i + 1) * w];
        for jo in 0..ow {
            let gv = rows[i * ow + jo];
            if gv != 0.0 {
                let j0 = jo * stride;
                for v in &mut dst[j0..j0 + size] {
                    *v += gv;
                }
            }
        }
    }
}

// ── separable filtering (replicate padding) ─────────────────────────────

pub(crate) fn separable_filter_plane(x: &[f64], h: usize, w: usize, kernel: &[f64], out: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let src = &x[i * w..(i + 1) * w];
        let dst = &mut tmp[i * w..(i + 1) * w];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                s += k * src[clamp_index(j as isize + t as isize - r, w)];
            }
            *d = s;
        }
    }
    out[..h * w].fill(0.0);
    for i in 0..h {
        for (t, &k) in kernel.iter().enumerate() {
            let si = clamp_index(i as isize + t as isize - r, h);
            let src = &tmp[si * w..(si + 1) * w];
            let dst = &mut out[i * w..(i + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
}

pub(crate) fn separable_filter_plane_backward(
    g: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    gx: &mut [f64],
) {
    let r = (kernel.len() / 2) as isize;
    let mut gtmp = vec![0.0; h * w];
    for i in 0..h {
        let src = &g[i * w..(i + 1) * w];
        for (t, &k) in kernel.iter().enumerate() {
            let si = clamp_index(i as isize + t as isize - r, h);
            let dst = &mut gtmp[si * w..(si + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    for i in 0..h {
        let src = &gtmp[i * w..(i + 1) * w];
        let dst = &mut gx[i * w..(i + 1) * w];
        for (j, &gv) in src.iter().enumerate() {
            for (t, &k) in kernel.iter().enumerate() {
                dst[clamp_index(j as isize + t as isize - r, w)] += k * gv;
            }
        }
    }
}

// ── bilinear shift ──────────────────────────────────────────────────────

/// Sampling taps `(lo, hi, frac)` along one axis for a constant offset,
/// with coordinates clamped to the valid range.
fn shift_taps(len: usize, offset: f64) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|i| {
            let p = (i as f64 + offset).clamp(0.0, (len - 1) as f64);
            let lo = p.floor() as usize;
            let frac = p - lo as f64;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, frac)
        })
        .collect()
}

/// `out(i, j) = x(i + dy, j + dx)` by bilinear interpolation; coordinates are
/// clamped at the borders (validity is tracked separately by callers).
pub(crate) fn shift_plane(x: &[f64], h: usize, w: usize, dx: f64, dy: f64, out: &mut [f64]) {
    let rows = shift_taps(h, dy);
    let cols = shift_taps(w, dx);
    for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
        let a = &x[r0 * w..(r0 + 1) * w];
        let b = &x[r1 * w..(r1 + 1) * w];
        let dst = &mut out[i * w..(i + 1) * w];
        for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
            let top = a[c0] + fx * (a[c1] - a[c0]);
            let bot = b[c0] + fx * (b[c1] - b[c0]);
            dst[j] = top + fy * (bot - top);
        }
    }
}

pub(crate) fn shift_plane_backward(g: &[f64], h: usize, w: usize, dx: f64, dy: f64, gx: &mut [f64]) {
    let rows = shift_taps(h, dy);
    let cols = shift_taps(w, dx);
    for (i, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (j, &(c0, c1, fx)) in cols.iter().enumerate() {
            let gv = g[i * w + j];
            if gv == 0.0 {
                continue;
            }
            let top = gv * (1.0 - fy);
            let bot = gv * fy;
            gx[r0 * w + c0] += top * (1.0 - fx);
            gx[r0 * w + c1] += top * fx;
            gx[r1 * w + c0] += bot * (1.0 - fx);
            gx[r1 * w + c1] += bot * fx;
        }
    }
}

// ── activations ─────────────────────────────────────────────────────────

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
        + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
