//! Raw forward/backward kernels over row-major slices.
//!
//! Layouts: dense weights `[in, out]`; conv1d kernels `[out_ch, in_ch, k]`;
//! transposed-conv kernels `[in_ch, out_ch, k]` (the same tensor a conv1d
//! with swapped roles would use, so the two are adjoint); activations
//! `[batch, channels, length]`. Convolution is cross-correlation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out[n,m] += op(a) * op(b)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(n: usize, k: usize, m: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), out: &mut [f64]) {
    if n == 0 || k == 0 || m == 0 {
        return;
    }
    assert!(a.len() >= (n - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (m - 1) * csb + 1);
    assert!(out.len() >= n * m);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out[n,m] += a[n,k] * b[k,m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_acc(n, k, m, a, (k, 1), b, (m, 1), out);
}

/// `out[k,m] += a[n,k]^T * b[n,m]`
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_acc(k, n, m, a, (1, k), b, (m, 1), out);
}

/// `out[n,m] += a[n,k] * b[m,k]^T`
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm_acc(n, k, m, a, (k, 1), b, (1, k), out);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn conv_out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    pub fn transpose_out_len(&self, len: usize) -> Option<usize> {
        ((len - 1) * self.stride + self.kernel).checked_sub(2 * self.padding).filter(|&l| l > 0)
    }
}

/// Unfolds `src [batch, channels, src_len]` into
/// `cols[n*positions + o, c*k + t] = src[n, c, o*stride + t - padding]` (zero outside).
fn im2col(src: &[f64], batch: usize, channels: usize, src_len: usize, g: ConvGeom, positions: usize) -> Vec<f64> {
    let ck = channels * g.kernel;
    let mut cols = vec![0.0; batch * positions * ck];
    for n in 0..batch {
        for c in 0..channels {
            let s = &src[(n * channels + c) * src_len..(n * channels + c + 1) * src_len];
            for o in 0..positions {
                let row = &mut cols[(n * positions + o) * ck + c * g.kernel..][..g.kernel];
                for (t, slot) in row.iter_mut().enumerate() {
                    let pos = (o * g.stride + t) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < src_len {
                        *slot = s[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `cols` back into `[batch, channels, dst_len]`.
fn col2im(cols: &[f64], batch: usize, channels: usize, dst_len: usize, g: ConvGeom, positions: usize) -> Vec<f64> {
    let ck = channels * g.kernel;
    let mut dst = vec![0.0; batch * channels * dst_len];
    for n in 0..batch {
        for c in 0..channels {
            let d = &mut dst[(n * channels + c) * dst_len..(n * channels + c + 1) * dst_len];
            for o in 0..positions {
                let row = &cols[(n * positions + o) * ck + c * g.kernel..][..g.kernel];
                for (t, v) in row.iter().enumerate() {
                    let pos = (o * g.stride + t) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < dst_len {
                        d[pos as usize] += v;
                    }
                }
            }
        }
    }
    dst
}

/// `[batch, ch, len]` to position-major `[batch*len, ch]`.
fn to_positions(x: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..ch {
            for l in 0..len {
                out[(n * len + l) * ch + c] = x[(n * ch + c) * len + l];
            }
        }
    }
    out
}

/// Inverse of [`to_positions`].
fn from_positions(p: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for n in 0..batch {
        for c in 0..ch {
            for l in 0..len {
                out[(n * ch + c) * len + l] = p[(n * len + l) * ch + c];
            }
        }
    }
    out
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_len: usize,
    pub out_len: usize,
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let ck = d.in_ch * g.kernel;
    let rows = d.batch * d.out_len;
    let cols = im2col(x, d.batch, d.in_ch, d.in_len, g, d.out_len);
    let mut y = vec![0.0; rows * d.out_ch];
    matmul_a_bt_acc(&cols, w, &mut y, rows, ck, d.out_ch);
    from_positions(&y, d.batch, d.out_ch, d.out_len)
}

/// Returns `(dx, dw)`; either may be skipped.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: &ConvDims,
    g: ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ck = d.in_ch * g.kernel;
    let rows = d.batch * d.out_len;
    let dyp = to_positions(dy, d.batch, d.out_ch, d.out_len);
    let dw = need_dw.then(|| {
        let cols = im2col(x, d.batch, d.in_ch, d.in_len, g, d.out_len);
        let mut dw = vec![0.0; w.len()];
        matmul_at_b_acc(&dyp, &cols, &mut dw, rows, d.out_ch, ck);
        dw
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; rows * ck];
        matmul_acc(&dyp, w, &mut dcols, rows, d.out_ch, ck);
        col2im(&dcols, d.batch, d.in_ch, d.in_len, g, d.out_len)
    });
    (dx, dw)
}

/// Transposed convolution; `d.in_*` describe the transposed op's input.
pub(crate) fn conv_transpose1d_forward(x: &[f64], w: &[f64], d: &ConvDims, g: ConvGeom) -> Vec<f64> {
    let ok = d.out_ch * g.kernel;
    let rows = d.batch * d.in_len;
    let xp = to_positions(x, d.batch, d.in_ch, d.in_len);
    let mut cols = vec![0.0; rows * ok];
    matmul_acc(&xp, w, &mut cols, rows, d.in_ch, ok);
    col2im(&cols, d.batch, d.out_ch, d.out_len, g, d.in_len)
}

pub(crate) fn conv_transpose1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: &ConvDims,
    g: ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ok = d.out_ch * g.kernel;
    let rows = d.batch * d.in_len;
    let cols = im2col(dy, d.batch, d.out_ch, d.out_len, g, d.in_len);
    let dx = need_dx.then(|| {
        let mut y = vec![0.0; rows * d.in_ch];
        matmul_a_bt_acc(&cols, w, &mut y, rows, ok, d.in_ch);
        from_positions(&y, d.batch, d.in_ch, d.in_len)
    });
    let dw = need_dw.then(|| {
        let xp = to_positions(x, d.batch, d.in_ch, d.in_len);
        let mut dw = vec![0.0; w.len()];
        matmul_at_b_acc(&xp, &cols, &mut dw, rows, d.in_ch, ok);
        dw
    });
    (dx, dw)
}

fn conv_dims(op: &'static str, x: &Tensor, w: &Tensor, transpose: bool, g: ConvGeom) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 {
        return Err(Error::shape(op, format!("expected 3-d input and kernel, got {xs:?} and {ws:?}")));
    }
    if g.kernel == 0 || g.stride == 0 || ws[2] != g.kernel {
        return Err(Error::shape(op, format!("kernel {ws:?} with stride {}", g.stride)));
    }
    let (in_ch, out_ch) = if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
    if xs[1] != in_ch {
        return Err(Error::shape(
            op,
            format!("input has {} channels but kernel {ws:?} expects {in_ch}", xs[1]),
        ));
    }
    let out_len = if transpose { g.transpose_out_len(xs[2]) } else { g.conv_out_len(xs[2]) }
        .ok_or_else(|| Error::shape(op, format!("length {} too short for kernel {} pad {}", xs[2], g.kernel, g.padding)))?;
    Ok(ConvDims {
        batch: xs[0],
        in_ch,
        out_ch,
        in_len: xs[2],
        out_len,
    })
}

/// 1-D cross-correlation of `input [batch, in_ch, len]` with `kernel [out_ch, in_ch, k]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeom { stride, padding, kernel: kernel.shape().get(2).copied().unwrap_or(0) };
    let d = conv_dims("conv1d", input, kernel, false, g)?;
    let out = conv1d_forward(input.data(), kernel.data(), &d, g);
    Tensor::new(&[d.batch, d.out_ch, d.out_len], out)
}

/// Transposed 1-D convolution with `kernel [in_ch, out_ch, k]`; the adjoint of [`conv1d`].
pub fn conv1d_transpose(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeom { stride, padding, kernel: kernel.shape().get(2).copied().unwrap_or(0) };
    let d = conv_dims("conv1d_transpose", input, kernel, true, g)?;
    let out = conv_transpose1d_forward(input.data(), kernel.data(), &d, g);
    Tensor::new(&[d.batch, d.out_ch, d.out_len], out)
}

pub(crate) fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    let data = input.data().iter().map(|&x| leaky_relu_scalar(x, slope)).collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Channel layout for batch norm: `[batch, features]` or `[batch, channels, length]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BnLayout {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl BnLayout {
    pub fn of(shape: &[usize]) -> Option<Self> {
        match *shape {
            [b, c] => Some(BnLayout { batch: b, channels: c, inner: 1 }),
            [b, c, l] => Some(BnLayout { batch: b, channels: c, inner: l }),
            _ => None,
        }
    }

    #[inline]
    pub fn for_each_index(&self, c: usize, mut f: impl FnMut(usize)) {
        for n in 0..self.batch {
            let base = (n * self.channels + c) * self.inner;
            for i in 0..self.inner {
                f(base + i);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.batch * self.inner
    }
}

/// Per-channel batch mean and biased variance.
pub(crate) fn channel_moments(x: &[f64], lay: BnLayout) -> (Vec<f64>, Vec<f64>) {
    let m = lay.count() as f64;
    let mut mean = vec![0.0; lay.channels];
    let mut var = vec![0.0; lay.channels];
    for c in 0..lay.channels {
        let mut s = 0.0;
        lay.for_each_index(c, |i| s += x[i]);
        let mu = s / m;
        let mut v = 0.0;
        lay.for_each_index(c, |i| v += (x[i] - mu) * (x[i] - mu));
        mean[c] = mu;
        var[c] = v / m;
    }
    (mean, var)
}

/// Minibatch-discrimination closeness: `o[i,b] = sum_{j != i} exp(-||M[i,b,:] - M[j,b,:]||_1)`
/// for `m` laid out `[batch, b*c]`.
pub(crate) fn mbd_closeness(m: &[f64], batch: usize, b: usize, c: usize) -> Vec<f64> {
    let w = b * c;
    let mut o = vec![0.0; batch * b];
    for i in 0..batch {
        for j in (i + 1)..batch {
            let (mi, mj) = (&m[i * w..(i + 1) * w], &m[j * w..(j + 1) * w]);
            for k in 0..b {
                let d: f64 = (0..c).map(|t| (mi[k * c + t] - mj[k * c + t]).abs()).sum();
                let e = (-d).exp();
                o[i * b + k] += e;
                o[j * b + k] += e;
            }
        }
    }
    o
}

/// Gradient of [`mbd_closeness`] with respect to `m`.
pub(crate) fn mbd_closeness_backward(m: &[f64], d_o: &[f64], batch: usize, b: usize, c: usize) -> Vec<f64> {
    let w = b * c;
    let mut dm = vec![0.0; m.len()];
    for i in 0..batch {
        for j in (i + 1)..batch {
            for k in 0..b {
                let mut d = 0.0;
                for t in 0..c {
                    d += (m[i * w + k * c + t] - m[j * w + k * c + t]).abs();
                }
                let coeff = (-d).exp() * (d_o[i * b + k] + d_o[j * b + k]);
                for t in 0..c {
                    let diff = m[i * w + k * c + t] - m[j * w + k * c + t];
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dm[i * w + k * c + t] -= coeff * s;
                    dm[j * w + k * c + t] += coeff * s;
                }
            }
        }
    }
    dm
}

/// Minibatch discrimination on `features [batch, a]` with projection `t [a, b, c]`;
/// returns `[batch, a + b]`.
pub fn minibatch_discrimination(features: &Tensor, t: &Tensor) -> Result<Tensor> {
    let (fs, ts) = (features.shape(), t.shape());
    if fs.len() != 2 || ts.len() != 3 || ts[0] != fs[1] {
        return Err(Error::shape(
            "minibatch_discrimination",
            format!("features {fs:?} incompatible with projection {ts:?}"),
        ));
    }
    if fs[0] < 2 {
        return Err(Error::Precondition("minibatch discrimination needs batch >= 2".into()));
    }
    let (n, a, b, c) = (fs[0], fs[1], ts[1], ts[2]);
    let mut m = vec![0.0; n * b * c];
    matmul_acc(features.data(), t.data(), &mut m, n, a, b * c);
    let o = mbd_closeness(&m, n, b, c);
    let mut out = Vec::with_capacity(n * (a + b));
    for i in 0..n {
        out.extend_from_slice(features.row(i));
        out.extend_from_slice(&o[i * b..(i + 1) * b]);
    }
    Tensor::new(&[n, a + b], out)
}
