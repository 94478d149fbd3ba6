//! Dense `f64` tensors and the layer primitives of the network, each with a
//! hand-written backward pass.
//!
//! Every primitive here is a pure function of its arguments. Convolutions are
//! cross-correlations (no kernel flip) lowered to a single GEMM via im2col.

use std::fmt;

use thiserror::Error;

/// Shape errors raised by tensor construction and the layer primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Row-major dense array of `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        write!(f, "Tensor{:?} {:?}", self.shape, head)?;
        if self.data.len() > PREVIEW {
            write!(f, "...")?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(shape_err(
                "axpy",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Returns channel `c` of a `[C, H, W]` tensor as `[H, W]`.
    pub fn channel(&self, c: usize) -> Result<Tensor, TensorError> {
        let (ch, h, w) = dims3("channel", self)?;
        if c >= ch {
            return Err(shape_err(
                "channel",
                format!("channel {c} out of range for {ch} channels"),
            ));
        }
        let plane = h * w;
        Ok(Tensor {
            shape: vec![h, w],
            data: self.data[c * plane..(c + 1) * plane].to_vec(),
        })
    }
}

fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Gradients of a layer with respect to its input and (optional) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub grad_input: Tensor,
    pub grad_weights: Option<Tensor>,
    pub grad_bias: Option<Tensor>,
}

/// `C = A · B` (or `C += A · B` when `accumulate`), with optional transposes
/// of the row-major operands. `A` is `m×k` after transposition, `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices for the given dimensions and strides.
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
            n as isize,
            1,
        );
    }
}

const KERNEL: usize = 3;

fn conv_out_extent(extent: usize, padding: usize) -> Option<usize> {
    (extent + 2 * padding).checked_sub(KERNEL - 1).filter(|&e| e > 0)
}

/// Unfolds a `[C, H, W]` input into a `[C·9, H'·W']` column matrix.
fn im2col(input: &[f64], c: usize, h: usize, w: usize, padding: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * KERNEL * KERNEL * oh * ow];
    let pad = padding as isize;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column matrix back onto a `[C, H, W]` buffer, summing overlaps.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, padding: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    let pad = padding as isize;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    padding: usize,
) -> Result<ConvDims, TensorError> {
    let (c_in, h, w) = dims3(op, input)?;
    let (c_out, wc) = match *weights.shape() {
        [o, c, KERNEL, KERNEL] => (o, c),
        ref s => {
            return Err(shape_err(
                op,
                format!("weights must be [C_out, C_in, 3, 3], got {s:?}"),
            ))
        }
    };
    if wc != c_in {
        return Err(shape_err(
            op,
            format!("input has {c_in} channels but weights expect {wc}"),
        ));
    }
    if padding > 1 {
        return Err(shape_err(op, format!("padding must be 0 or 1, got {padding}")));
    }
    let (oh, ow) = match (conv_out_extent(h, padding), conv_out_extent(w, padding)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(shape_err(
                op,
                format!("input {h}x{w} too small for a 3x3 kernel with padding {padding}"),
            ))
        }
    };
    Ok(ConvDims {
        c_in,
        h,
        w,
        c_out,
        oh,
        ow,
    })
}

/// 3×3 cross-correlation of `[C_in, H, W]` with `[C_out, C_in, 3, 3]` plus bias.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let d = conv_dims("conv2d_forward", input, weights, padding)?;
    if bias.shape() != [d.c_out] {
        return Err(shape_err(
            "conv2d_forward",
            format!("bias must be [{}], got {:?}", d.c_out, bias.shape()),
        ));
    }
    let cols = im2col(input.data(), d.c_in, d.h, d.w, padding, d.oh, d.ow);
    let plane = d.oh * d.ow;
    let mut out = vec![0.0; d.c_out * plane];
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    gemm(
        d.c_out,
        d.c_in * KERNEL * KERNEL,
        plane,
        weights.data(),
        false,
        &cols,
        false,
        &mut out,
        true,
    );
    Tensor::new(vec![d.c_out, d.oh, d.ow], out)
}

fn check_grad_output(op: &'static str, d: &ConvDims, grad_output: &Tensor) -> Result<(), TensorError> {
    if grad_output.shape() != [d.c_out, d.oh, d.ow] {
        return Err(shape_err(
            op,
            format!(
                "grad_output must be {:?}, got {:?}",
                [d.c_out, d.oh, d.ow],
                grad_output.shape()
            ),
        ));
    }
    Ok(())
}

/// Gradient of `sum(grad_output ⊙ conv(input))` with respect to the input only.
pub fn conv2d_backward_input(
    input_shape: &[usize],
    weights: &Tensor,
    grad_output: &Tensor,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let probe = Tensor::zeros(input_shape);
    let d = conv_dims("conv2d_backward", &probe, weights, padding)?;
    check_grad_output("conv2d_backward", &d, grad_output)?;
    let plane = d.oh * d.ow;
    let rows = d.c_in * KERNEL * KERNEL;
    let mut grad_cols = vec![0.0; rows * plane];
    gemm(
        rows,
        d.c_out,
        plane,
        weights.data(),
        true,
        grad_output.data(),
        false,
        &mut grad_cols,
        false,
    );
    let gi = col2im(&grad_cols, d.c_in, d.h, d.w, padding, d.oh, d.ow);
    Tensor::new(input_shape.to_vec(), gi)
}

/// Weight and bias gradients of `sum(grad_output ⊙ conv(input))`.
pub fn conv2d_backward_params(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
    padding: usize,
) -> Result<(Tensor, Tensor), TensorError> {
    let d = conv_dims("conv2d_backward", input, weights, padding)?;
    check_grad_output("conv2d_backward", &d, grad_output)?;
    let plane = d.oh * d.ow;
    let rows = d.c_in * KERNEL * KERNEL;
    let cols = im2col(input.data(), d.c_in, d.h, d.w, padding, d.oh, d.ow);

    let mut gw = vec![0.0; d.c_out * rows];
    gemm(
        d.c_out,
        plane,
        rows,
        grad_output.data(),
        false,
        &cols,
        true,
        &mut gw,
        false,
    );
    let gb: Vec<f64> = grad_output
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum())
        .collect();
    Ok((
        Tensor::new(weights.shape().to_vec(), gw)?,
        Tensor::new(vec![d.c_out], gb)?,
    ))
}

/// Full adjoint of [`conv2d_forward`].
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
    padding: usize,
) -> Result<LayerGrads, TensorError> {
    let (gw, gb) = conv2d_backward_params(input, weights, grad_output, padding)?;
    let grad_input = conv2d_backward_input(input.shape(), weights, grad_output, padding)?;
    Ok(LayerGrads {
        grad_input,
        grad_weights: Some(gw),
        grad_bias: Some(gb),
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `grad_output` where `input > 0`; the derivative at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, grad_output: &Tensor) -> Result<Tensor, TensorError> {
    if input.shape() != grad_output.shape() {
        return Err(shape_err(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_output.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Flat input index of the window maximum for every pooled cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub output_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

pub fn pool_out_extent(extent: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > extent {
        None
    } else {
        Some((extent - kernel) / stride + 1)
    }
}

/// Max-pooling without padding. Ties resolve to the first maximum in
/// row-major scan order.
pub fn maxpool2d_forward(
    input: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor, ArgmaxMap), TensorError> {
    let (c, h, w) = dims3("maxpool2d_forward", input)?;
    if stride == 0 {
        return Err(shape_err("maxpool2d_forward", "stride must be at least 1"));
    }
    let (oh, ow) = match (
        pool_out_extent(h, kernel, stride),
        pool_out_extent(w, kernel, stride),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(shape_err(
                "maxpool2d_forward",
                format!("kernel {kernel} does not fit input extent {h}x{w}"),
            ))
        }
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for i in row..row + kernel {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    let shape = vec![c, oh, ow];
    Ok((
        Tensor::new(shape.clone(), out)?,
        ArgmaxMap {
            output_shape: shape,
            indices: idx,
        },
    ))
}

/// Routes each pooled gradient back to its argmax, accumulating overlaps.
pub fn maxpool2d_backward(
    argmax: &ArgmaxMap,
    grad_output: &Tensor,
    input_shape: &[usize],
) -> Result<Tensor, TensorError> {
    if grad_output.shape() != argmax.output_shape.as_slice() {
        return Err(shape_err(
            "maxpool2d_backward",
            format!(
                "grad_output {:?} does not match pooled shape {:?}",
                grad_output.shape(),
                argmax.output_shape
            ),
        ));
    }
    let mut gi = Tensor::zeros(input_shape);
    let buf = gi.data_mut();
    for (&i, &g) in argmax.indices.iter().zip(grad_output.data()) {
        buf[i] += g;
    }
    Ok(gi)
}

/// `y = W·x + b` for `W: [M, N]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = dense_dims("dense_forward", input, weights, bias)?;
    let mut out = bias.data().to_vec();
    gemm(m, n, 1, weights.data(), false, input.data(), false, &mut out, true);
    Tensor::new(vec![m], out)
}

fn dense_dims(
    op: &'static str,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize), TensorError> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(shape_err(op, format!("weights must be [M, N], got {s:?}"))),
    };
    if input.len() != n {
        return Err(shape_err(
            op,
            format!("input has {} values but weights expect {n}", input.len()),
        ));
    }
    if bias.shape() != [m] {
        return Err(shape_err(op, format!("bias must be [{m}], got {:?}", bias.shape())));
    }
    Ok((m, n))
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_output: &Tensor,
) -> Result<LayerGrads, TensorError> {
    let m = weights.shape().first().copied().unwrap_or(0);
    let bias_probe = Tensor::zeros(&[m.max(1)]);
    let (m, n) = dense_dims("dense_backward", input, weights, &bias_probe)?;
    if grad_output.shape() != [m] {
        return Err(shape_err(
            "dense_backward",
            format!("grad_output must be [{m}], got {:?}", grad_output.shape()),
        ));
    }
    let mut gi = vec![0.0; n];
    gemm(n, m, 1, weights.data(), true, grad_output.data(), false, &mut gi, false);
    let mut gw = vec![0.0; m * n];
    gemm(m, 1, n, grad_output.data(), false, input.data(), false, &mut gw, false);
    Ok(LayerGrads {
        grad_input: Tensor::new(input.shape().to_vec(), gi)?,
        grad_weights: Some(Tensor::new(vec![m, n], gw)?),
        grad_bias: Some(grad_output.clone()),
    })
}

/// Binary cross-entropy on a raw logit. Returns `(loss, d loss / d logit)`.
pub fn bce_with_logits(logit: f64, label: u8) -> (f64, f64) {
    let y = if label == 0 { 0.0 } else { 1.0 };
    // log(1 + exp(-s·z)) with s = 2y - 1, rewritten to avoid overflow.
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite_diff_grad needs eps > 0");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Central differences that also report, per coordinate, whether the stencil
/// stayed on one smooth piece. `f` returns the value together with a
/// signature of its non-smooth choices (ReLU signs, pool winners); a
/// coordinate is smooth when the signatures at `x ± eps` match the one at `x`.
pub fn finite_diff_grad_checked<P: PartialEq>(
    f: impl Fn(&Tensor) -> (f64, P),
    x: &Tensor,
    eps: f64,
) -> (Tensor, Vec<bool>) {
    assert!(eps > 0.0, "finite_diff_grad needs eps > 0");
    let (_, base) = f(x);
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    let mut smooth = vec![true; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (up, pu) = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let (down, pd) = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
        smooth[i] = pu == base && pd == base;
    }
    (grad, smooth)
}

/// [`relative_error`] restricted to the coordinates flagged in `keep`.
pub fn relative_error_where(a: &Tensor, b: &Tensor, keep: &[bool], floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    assert_eq!(a.len(), keep.len());
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((x, y), _)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.data().iter().map(|v| v.abs()).fold(floor, f64::max);
    diff / scale
}

/// `max |a - b| / max(max |b|, floor)`, the comparison used by gradient checks.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.data().iter().map(|v| v.abs()).fold(floor, f64::max);
    diff / scale
}
